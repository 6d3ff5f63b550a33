//! Smooth parametric masks built from geodesic bumps, and the bump
//! response rows that turn correlation into matrix products.

use std::sync::Arc;

use nalgebra::Matrix3;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::linalg::{expm, sym_exp};
use crate::geometry::space::{random_rotation, random_symmetric, random_unit_vector};
use crate::geometry::{CompactPart, GroupElement, GroupKind, ManifoldPoint, QuadratureGrid, Site, SpaceKind};

/// `w_{oi}(x) = Σ_k c_{oik} exp(−d²(x, a_k) / 2τ²)`.
#[derive(Clone, Debug)]
pub struct BumpMask<S> {
    anchors: Vec<S>,
    tau: f64,
    /// `channels_out × channels_in × anchors`.
    coefficients: Array3<f64>,
}

impl<S: Site> BumpMask<S> {
    pub fn new(anchors: Vec<S>, tau: f64, coefficients: Array3<f64>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("bump width must be positive, got {tau}")));
        }
        if anchors.is_empty() || coefficients.dim().2 != anchors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} anchors for coefficients of shape {:?}",
                anchors.len(),
                coefficients.dim()
            )));
        }
        if !coefficients.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("mask coefficients".into()));
        }
        let kind = anchors[0].acting_group();
        if anchors.iter().any(|a| a.acting_group() != kind) {
            return Err(Error::InvalidArgument("anchors on different domains".into()));
        }
        Ok(BumpMask { anchors, tau, coefficients })
    }

    /// Coefficients drawn uniformly in `±√(6 / (fan_in + fan_out))` with
    /// `fan_in = channels_in · K` and `fan_out = channels_out · K`.
    pub fn xavier<R: Rng + ?Sized>(
        anchors: Vec<S>,
        tau: f64,
        channels_out: usize,
        channels_in: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k = anchors.len();
        let limit = (6.0 / ((channels_in + channels_out) * k) as f64).sqrt();
        let c = Array3::from_shape_fn((channels_out, channels_in, k), |_| rng.random_range(-limit..limit));
        BumpMask::new(anchors, tau, c)
    }

    pub fn anchors(&self) -> &[S] {
        &self.anchors
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn coefficients(&self) -> &Array3<f64> {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut Array3<f64> {
        &mut self.coefficients
    }

    pub fn channels_out(&self) -> usize {
        self.coefficients.dim().0
    }

    pub fn channels_in(&self) -> usize {
        self.coefficients.dim().1
    }

    pub fn domain_group(&self) -> GroupKind {
        self.anchors[0].acting_group()
    }

    pub fn kernel(&self, d: f64) -> f64 {
        (-d * d / (2.0 * self.tau * self.tau)).exp()
    }

    /// Per-anchor bump values at `x`.
    pub fn bumps(&self, x: &S) -> Result<Vec<f64>> {
        self.anchors.iter().map(|a| Ok(self.kernel(x.distance_to(a)?))).collect()
    }

    /// All channel pairs at `x`, shape `out × in`.
    pub fn eval(&self, x: &S) -> Result<Array2<f64>> {
        let b = ndarray::Array1::from(self.bumps(x)?);
        let (o, i, k) = self.coefficients.dim();
        let flat = self.coefficients.view().into_shape_with_order((o * i, k)).expect("contiguous");
        Ok(flat.dot(&b).into_shape_with_order((o, i)).expect("sized"))
    }

    /// `(L★^g w)(x) = w(g⁻¹.x)`: the same coefficients on anchors `g.a_k`.
    pub fn pushforward(&self, g: &GroupElement) -> Result<Self> {
        let anchors = self.anchors.iter().map(|a| a.translate(g)).collect::<Result<Vec<_>>>()?;
        Ok(BumpMask { anchors, tau: self.tau, coefficients: self.coefficients.clone() })
    }
}

/// Precomputed grid data for fast bump rows on tensor-product grids.
#[derive(Clone, Debug)]
pub struct BumpRows<S> {
    grid: Arc<QuadratureGrid<S>>,
    tau: f64,
    factors: Option<Factors>,
}

#[derive(Clone, Debug)]
struct Factors {
    outer: Vec<CompactPart>,
    inner_log: Vec<f64>,
}

impl<S: Site> BumpRows<S> {
    pub fn new(grid: Arc<QuadratureGrid<S>>, tau: f64) -> Self {
        let factors = grid.spec().and_then(|s| s.tensor_shape()).and_then(|(n_out, n_in)| {
            if n_out * n_in != grid.len() {
                return None;
            }
            let nodes = grid.nodes();
            let outer = (0..n_out)
                .map(|s| nodes[s * n_in].product_parts().map(|p| p.0))
                .collect::<Option<Vec<_>>>()?;
            let inner_log = (0..n_in)
                .map(|r| nodes[r].product_parts().map(|p| p.1.ln()))
                .collect::<Option<Vec<_>>>()?;
            Some(Factors { outer, inner_log })
        });
        BumpRows { grid, tau, factors }
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid<S>> {
        &self.grid
    }

    /// `out[i] = wᵢ · exp(−d²(xᵢ, anchor)/2τ²)` over the grid nodes.
    pub fn fill(&self, anchor: &S, out: &mut [f64]) -> Result<()> {
        let c = -0.5 / (self.tau * self.tau);
        let weights = self.grid.weights();
        if let (Some(f), Some((part, scale))) = (&self.factors, anchor.product_parts()) {
            let n_in = f.inner_log.len();
            let ls = scale.ln();
            let er: Vec<f64> = f.inner_log.iter().map(|l| (c * (l - ls) * (l - ls)).exp()).collect();
            for (s, p) in f.outer.iter().enumerate() {
                let d = p.distance(&part);
                let es = (c * d * d).exp();
                let base = s * n_in;
                for r in 0..n_in {
                    out[base + r] = weights[base + r] * es * er[r];
                }
            }
            return Ok(());
        }
        for ((o, x), w) in out.iter_mut().zip(self.grid.nodes()).zip(weights) {
            let d = x.distance_to(anchor)?;
            *o = w * (c * d * d).exp();
        }
        Ok(())
    }

    /// Rows `(j, k) ↦ wᵢ · exp(−d²(xᵢ, g_j.a_k)/2τ²)` stacked as a
    /// `(J·K) × N` matrix, row index `j·K + k`.
    pub fn matrix(&self, anchors: &[S], elements: &[GroupElement]) -> Result<Array2<f64>> {
        let k = anchors.len();
        let mut m = Array2::zeros((elements.len() * k, self.grid.len()));
        for (j, g) in elements.iter().enumerate() {
            for (a_idx, a) in anchors.iter().enumerate() {
                let moved = a.translate(g)?;
                let mut row = m.row_mut(j * k + a_idx);
                self.fill(&moved, row.as_slice_mut().expect("row-major"))?;
            }
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bump response".into()));
        }
        Ok(m)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Seeded anchors on a manifold: uniform directions, log-normal radii with
/// the given spread, and `exp(spread · Z)` for SPD points.
pub fn manifold_anchors<R: Rng + ?Sized>(kind: SpaceKind, count: usize, spread: f64, rng: &mut R) -> Vec<ManifoldPoint> {
    (0..count)
        .map(|_| match kind {
            SpaceKind::Sphere2 => ManifoldPoint::Sphere(random_unit_vector(rng)),
            SpaceKind::PositiveHalfLine => ManifoldPoint::HalfLine((spread * gaussian(rng)).exp()),
            SpaceKind::ProductS2RPlus => {
                ManifoldPoint::Product(random_unit_vector(rng), (spread * gaussian(rng)).exp())
            }
            SpaceKind::Spd3 => ManifoldPoint::Spd(sym_exp(&(random_symmetric(rng) * spread))),
        })
        .collect()
}

/// Seeded anchors on a group: uniform rotations, log-normal scales, and
/// `exp(spread · Z)` near the identity of GL(3).
pub fn group_anchors<R: Rng + ?Sized>(kind: GroupKind, count: usize, spread: f64, rng: &mut R) -> Vec<GroupElement> {
    (0..count)
        .map(|_| match kind {
            GroupKind::So3 => GroupElement::Rotation(random_rotation(rng)),
            GroupKind::Scale => GroupElement::Scale((spread * gaussian(rng)).exp()),
            GroupKind::So3xScale => {
                GroupElement::RotScale(random_rotation(rng), (spread * gaussian(rng)).exp())
            }
            GroupKind::Gl3 => {
                let z = Matrix3::from_fn(|_, _| gaussian(rng));
                GroupElement::General(expm(&(z * spread)))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::linalg::rot_z;
    use crate::geometry::space::random_group_element;
    use crate::geometry::{build_grid, haar_grid, GridSpec, RadialSpec, ScaleSpec};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask(seed: u64) -> BumpMask<ManifoldPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = manifold_anchors(SpaceKind::ProductS2RPlus, 5, 0.5, &mut rng);
        BumpMask::xavier(anchors, 0.6, 2, 1, &mut rng).unwrap()
    }

    #[test]
    fn pushforward_is_exact_translation() {
        let w = mask(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let id = GroupElement::identity(GroupKind::So3xScale);
        let x = manifold_anchors(SpaceKind::ProductS2RPlus, 1, 0.5, &mut rng).remove(0);
        assert_eq!(w.pushforward(&id).unwrap().eval(&x).unwrap(), w.eval(&x).unwrap());
        let g1 = random_group_element(GroupKind::So3xScale, &mut rng);
        let g2 = random_group_element(GroupKind::So3xScale, &mut rng);
        let moved = w.pushforward(&g1).unwrap();
        let gx = x.act(&g1).unwrap();
        assert!((moved.eval(&gx).unwrap() - w.eval(&x).unwrap()).iter().all(|d| d.abs() < 1e-12));
        let nested = w.pushforward(&g2).unwrap().pushforward(&g1).unwrap();
        let direct = w.pushforward(&g1.compose(&g2).unwrap()).unwrap();
        for _ in 0..100 {
            let y = manifold_anchors(SpaceKind::ProductS2RPlus, 1, 0.8, &mut rng).remove(0);
            let d = nested.eval(&y).unwrap() - direct.eval(&y).unwrap();
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn anchor_gradient_matches_closed_form() {
        // w(x) = exp(−d²/2τ²), anchor moved along a tangent direction v.
        let tau = 0.4;
        let x = Vector3::new(0.3, -0.2, 0.9).normalize();
        let a = Vector3::new(-0.1, 0.4, 0.8).normalize();
        let v = (Vector3::new(1.0, 0.3, 0.0) - a * a.dot(&Vector3::new(1.0, 0.3, 0.0))).normalize();
        let w_at = |t: f64| {
            let at = a * t.cos() + v * t.sin();
            let m = BumpMask::new(vec![ManifoldPoint::Sphere(at)], tau, Array3::ones((1, 1, 1))).unwrap();
            m.eval(&ManifoldPoint::Sphere(x)).unwrap()[[0, 0]]
        };
        let h = 1e-5;
        let fd = (w_at(h) - w_at(-h)) / (2.0 * h);
        let d = x.cross(&a).norm().atan2(x.dot(&a));
        let dd = -x.dot(&v) / d.sin();
        let analytic = w_at(0.0) * (-d / (tau * tau)) * dd;
        assert!(((fd - analytic) / analytic).abs() < 1e-5, "{fd} vs {analytic}");
    }

    #[test]
    fn tensor_rows_match_generic_rows() {
        let spec = GridSpec::Product { order: 4, radial: RadialSpec::new(10) };
        let grid = Arc::new(build_grid(&spec).unwrap());
        let plain = Arc::new(QuadratureGrid::from_parts(grid.nodes().to_vec(), grid.weights().to_vec()).unwrap());
        let w = mask(3);
        let g = vec![
            GroupElement::rot_scale(rot_z(0.3), 1.7).unwrap(),
            GroupElement::identity(GroupKind::So3xScale),
        ];
        let fast = BumpRows::new(grid, w.tau()).matrix(w.anchors(), &g).unwrap();
        let slow = BumpRows::new(plain, w.tau()).matrix(w.anchors(), &g).unwrap();
        assert!((fast - slow).iter().all(|d| d.abs() < 1e-13));

        let gspec = GridSpec::So3xScale { n_alpha: 3, n_beta: 2, n_gamma: 3, scale: ScaleSpec::powers_of_two(-1, 1) };
        let ggrid = Arc::new(haar_grid(&gspec).unwrap());
        let gplain = Arc::new(QuadratureGrid::from_parts(ggrid.nodes().to_vec(), ggrid.weights().to_vec()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let anchors = group_anchors(GroupKind::So3xScale, 3, 0.5, &mut rng);
        let fast = BumpRows::new(ggrid, 0.7).matrix(&anchors, &g).unwrap();
        let slow = BumpRows::new(gplain, 0.7).matrix(&anchors, &g).unwrap();
        assert!((fast - slow).iter().all(|d| d.abs() < 1e-13));
    }

    #[test]
    fn rejects_bad_masks() {
        let a = vec![ManifoldPoint::Sphere(Vector3::z())];
        assert!(BumpMask::new(a.clone(), 0.0, Array3::ones((1, 1, 1))).is_err());
        assert!(BumpMask::new(a, 1.0, Array3::ones((1, 1, 2))).is_err());
    }
}
