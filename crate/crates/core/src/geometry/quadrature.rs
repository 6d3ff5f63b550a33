//! Quadrature grids on the supported spaces and groups.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::group::{GroupElement, GroupKind};
use super::linalg::{euler_zyz, expm, rot_z, sym_exp};
use super::space::{random_symmetric, ManifoldPoint, SpaceKind};
use super::Site;
use crate::error::{Error, Result};

/// Log-uniform radial nodes `r = e^u`, `u ∈ [log_min, log_max]`, integrating
/// against the scale-invariant density `dr / r` with the trapezoidal rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSpec {
    pub nodes: usize,
    #[serde(default = "RadialSpec::default_log_min")]
    pub log_min: f64,
    #[serde(default = "RadialSpec::default_log_max")]
    pub log_max: f64,
}

impl RadialSpec {
    fn default_log_min() -> f64 {
        -8.0
    }

    fn default_log_max() -> f64 {
        4.5
    }

    pub fn new(nodes: usize) -> Self {
        RadialSpec {
            nodes,
            log_min: Self::default_log_min(),
            log_max: Self::default_log_max(),
        }
    }

    pub fn step(&self) -> f64 {
        (self.log_max - self.log_min) / (self.nodes - 1) as f64
    }
}

/// Log-uniform scale nodes with trapezoidal weights in `log s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub count: usize,
    pub log_min: f64,
    pub log_max: f64,
}

impl ScaleSpec {
    /// Scales `2^lo, …, 2^hi` in unit steps of the exponent.
    pub fn powers_of_two(lo: i32, hi: i32) -> Self {
        ScaleSpec {
            count: (hi - lo + 1).max(1) as usize,
            log_min: lo as f64 * std::f64::consts::LN_2,
            log_max: hi as f64 * std::f64::consts::LN_2,
        }
    }
}

/// Resolution descriptor of a grid; also its serialized identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Gauss–Legendre in cos θ (`order` nodes) × `2·order` uniform azimuths.
    Sphere { order: usize },
    HalfLine { radial: RadialSpec },
    Product { order: usize, radial: RadialSpec },
    /// Monte Carlo points `exp(spread · Z)` with equal weights.
    Spd { count: usize, spread: f64, seed: u64 },
    /// ZYZ Euler grid with Haar weights normalized to one.
    So3 { n_alpha: usize, n_beta: usize, n_gamma: usize },
    Scale { scale: ScaleSpec },
    So3xScale { n_alpha: usize, n_beta: usize, n_gamma: usize, scale: ScaleSpec },
    /// Seeded elements `exp(epsilon · Z)` with equal weights.
    Gl3 { count: usize, epsilon: f64, seed: u64 },
}

impl GridSpec {
    pub fn space_kind(&self) -> Option<SpaceKind> {
        match self {
            GridSpec::Sphere { .. } => Some(SpaceKind::Sphere2),
            GridSpec::HalfLine { .. } => Some(SpaceKind::PositiveHalfLine),
            GridSpec::Product { .. } => Some(SpaceKind::ProductS2RPlus),
            GridSpec::Spd { .. } => Some(SpaceKind::Spd3),
            _ => None,
        }
    }

    pub fn group_kind(&self) -> Option<GroupKind> {
        match self {
            GridSpec::So3 { .. } => Some(GroupKind::So3),
            GridSpec::Scale { .. } => Some(GroupKind::Scale),
            GridSpec::So3xScale { .. } => Some(GroupKind::So3xScale),
            GridSpec::Gl3 { .. } => Some(GroupKind::Gl3),
            _ => None,
        }
    }

    /// `(outer, inner)` factor sizes when the grid is a tensor product stored
    /// outer-major.
    pub fn tensor_shape(&self) -> Option<(usize, usize)> {
        match self {
            GridSpec::Product { order, radial } => Some((2 * order * order, radial.nodes)),
            GridSpec::So3xScale { n_alpha, n_beta, n_gamma, scale } => {
                Some((n_alpha * n_beta * n_gamma, scale.count))
            }
            _ => None,
        }
    }
}

/// Nodes with positive weights approximating integration against the
/// invariant measure of a space or group.
#[derive(Clone, Debug)]
pub struct QuadratureGrid<S> {
    nodes: Vec<S>,
    weights: Vec<f64>,
    spec: Option<GridSpec>,
}

pub type ManifoldGrid = QuadratureGrid<ManifoldPoint>;
pub type GroupGrid = QuadratureGrid<GroupElement>;

impl<S: Site> QuadratureGrid<S> {
    /// Grid from explicit nodes and weights.
    pub fn from_parts(nodes: Vec<S>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} nodes with {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        Ok(QuadratureGrid { nodes, weights, spec: None })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[S] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spec(&self) -> Option<&GridSpec> {
        self.spec.as_ref()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ wᵢ f(xᵢ)`.
    pub fn integrate(&self, mut f: impl FnMut(&S) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }

    /// Same nodes moved by `g`, weights unchanged. The result carries no spec.
    pub fn translated(&self, g: &GroupElement) -> Result<Self> {
        let nodes = self
            .nodes
            .iter()
            .map(|x| x.translate(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(QuadratureGrid { nodes, weights: self.weights.clone(), spec: None })
    }

    /// Nodes replaced pointwise, weights unchanged.
    pub fn map_nodes(&self, f: impl FnMut(&S) -> Result<S>) -> Result<Self> {
        let nodes = self.nodes.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(QuadratureGrid { nodes, weights: self.weights.clone(), spec: None })
    }

    /// Index of the node within `tol` (max coordinate difference) of `x`.
    pub fn find_node(&self, x: &S, tol: f64) -> Option<usize> {
        let target = x.coords();
        self.nodes.iter().position(|n| {
            n.coords()
                .iter()
                .zip(&target)
                .all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    /// Whether both grids hold the same nodes and weights.
    pub fn same_as(&self, other: &Self) -> bool {
        std::ptr::eq(self, other)
            || (self.weights == other.weights
                && self
                    .nodes
                    .iter()
                    .zip(&other.nodes)
                    .all(|(a, b)| a.coords() == b.coords()))
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[n - 1 - i] = z;
        w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Laguerre nodes and weights for `∫₀^∞ f(x) e^{-x} dx`.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - x[i - 2])
            }
        };
        for _ in 0..200 {
            let (p, pp) = laguerre_with_derivative(n, z);
            let dz = p / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, pp) = laguerre_with_derivative(n, z);
        x[i] = z;
        // w = 1 / (x L_n'(x)^2)
        w[i] = 1.0 / (z * pp * pp);
    }
    (x, w)
}

fn laguerre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        p1 = ((2 * j + 1) as f64 - z) * p2 / (j + 1) as f64 - j as f64 * p3 / (j + 1) as f64;
    }
    let pp = n as f64 * (p1 - p2) / z;
    (p1, pp)
}

/// Gauss–Laguerre rule re-weighted by `e^{xᵢ}` so it integrates against plain `dr`.
pub fn gauss_laguerre_lebesgue(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_laguerre(n);
    let w = x.iter().zip(&w).map(|(xi, wi)| wi * xi.exp()).collect();
    (x, w)
}

fn sphere_nodes(order: usize) -> (Vec<ManifoldPoint>, Vec<f64>) {
    let (ct, wt) = gauss_legendre(order);
    let n_phi = 2 * order;
    let dphi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(order * n_phi);
    let mut weights = Vec::with_capacity(order * n_phi);
    for (c, w) in ct.iter().zip(&wt) {
        let theta = c.clamp(-1.0, 1.0).acos();
        for k in 0..n_phi {
            nodes.push(ManifoldPoint::from_angles(theta, k as f64 * dphi));
            weights.push(w * dphi);
        }
    }
    (nodes, weights)
}

fn trapezoid_log_nodes(count: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    if count == 1 {
        return (vec![lo], vec![1.0]);
    }
    let h = (hi - lo) / (count - 1) as f64;
    let u = (0..count).map(|i| lo + i as f64 * h).collect();
    let w = (0..count)
        .map(|i| if i == 0 || i == count - 1 { 0.5 * h } else { h })
        .collect();
    (u, w)
}

fn radial_nodes(spec: &RadialSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.nodes < 2 || spec.log_max <= spec.log_min {
        return Err(Error::UnsupportedResolution(format!(
            "radial grid needs at least 2 nodes over a nonempty range, got {spec:?}"
        )));
    }
    let (u, w) = trapezoid_log_nodes(spec.nodes, spec.log_min, spec.log_max);
    Ok((u.into_iter().map(f64::exp).collect(), w))
}

fn euler_nodes(n_alpha: usize, n_beta: usize, n_gamma: usize) -> Result<(Vec<Matrix3<f64>>, Vec<f64>)> {
    if n_alpha < 2 || n_beta < 2 || n_gamma < 2 {
        return Err(Error::UnsupportedResolution(format!(
            "Euler grid needs at least 2 nodes per angle, got {n_alpha}×{n_beta}×{n_gamma}"
        )));
    }
    let mut rots = Vec::with_capacity(n_alpha * n_beta * n_gamma);
    let mut weights = Vec::with_capacity(rots.capacity());
    for a in 0..n_alpha {
        let alpha = 2.0 * PI * a as f64 / n_alpha as f64;
        for b in 0..n_beta {
            let beta = PI * (b as f64 + 0.5) / n_beta as f64;
            for c in 0..n_gamma {
                let gamma = 2.0 * PI * c as f64 / n_gamma as f64;
                rots.push(euler_zyz(alpha, beta, gamma));
                weights.push(beta.sin());
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((rots, weights))
}

fn scale_nodes(spec: &ScaleSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.count == 0 || (spec.count > 1 && spec.log_max <= spec.log_min) {
        return Err(Error::UnsupportedResolution(format!("bad scale grid {spec:?}")));
    }
    let (u, w) = trapezoid_log_nodes(spec.count, spec.log_min, spec.log_max);
    Ok((u.into_iter().map(f64::exp).collect(), w))
}

/// Quadrature grid on a manifold.
pub fn build_grid(spec: &GridSpec) -> Result<ManifoldGrid> {
    let (nodes, weights) = match spec {
        GridSpec::Sphere { order } => {
            if *order < 2 {
                return Err(Error::UnsupportedResolution(format!("sphere order {order} < 2")));
            }
            sphere_nodes(*order)
        }
        GridSpec::HalfLine { radial } => {
            let (r, w) = radial_nodes(radial)?;
            (r.into_iter().map(ManifoldPoint::HalfLine).collect(), w)
        }
        GridSpec::Product { order, radial } => {
            if *order < 2 {
                return Err(Error::UnsupportedResolution(format!("sphere order {order} < 2")));
            }
            let (sn, sw) = sphere_nodes(*order);
            let (rn, rw) = radial_nodes(radial)?;
            let mut nodes = Vec::with_capacity(sn.len() * rn.len());
            let mut weights = Vec::with_capacity(nodes.capacity());
            for (s, ws) in sn.iter().zip(&sw) {
                let v = *s.direction().expect("sphere node");
                for (r, wr) in rn.iter().zip(&rw) {
                    nodes.push(ManifoldPoint::Product(v, *r));
                    weights.push(ws * wr);
                }
            }
            (nodes, weights)
        }
        GridSpec::Spd { count, spread, seed } => {
            if *count == 0 || !(*spread > 0.0) {
                return Err(Error::UnsupportedResolution(format!(
                    "SPD grid needs count ≥ 1 and spread > 0, got {count}, {spread}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let nodes = (0..*count)
                .map(|_| ManifoldPoint::Spd(sym_exp(&(random_symmetric(&mut rng) * *spread))))
                .collect();
            (nodes, vec![1.0 / *count as f64; *count])
        }
        other => {
            return Err(Error::UnsupportedResolution(format!(
                "{other:?} is a group grid; use haar_grid"
            )))
        }
    };
    Ok(QuadratureGrid { nodes, weights, spec: Some(spec.clone()) })
}

/// Haar quadrature grid on a group.
pub fn haar_grid(spec: &GridSpec) -> Result<GroupGrid> {
    let (nodes, weights): (Vec<GroupElement>, Vec<f64>) = match spec {
        GridSpec::So3 { n_alpha, n_beta, n_gamma } => {
            let (r, w) = euler_nodes(*n_alpha, *n_beta, *n_gamma)?;
            (r.into_iter().map(GroupElement::Rotation).collect(), w)
        }
        GridSpec::Scale { scale } => {
            let (s, w) = scale_nodes(scale)?;
            (s.into_iter().map(GroupElement::Scale).collect(), w)
        }
        GridSpec::So3xScale { n_alpha, n_beta, n_gamma, scale } => {
            let (rots, rw) = euler_nodes(*n_alpha, *n_beta, *n_gamma)?;
            let (scales, sw) = scale_nodes(scale)?;
            let mut nodes = Vec::with_capacity(rots.len() * scales.len());
            let mut weights = Vec::with_capacity(nodes.capacity());
            for (r, wr) in rots.iter().zip(&rw) {
                for (s, ws) in scales.iter().zip(&sw) {
                    nodes.push(GroupElement::RotScale(*r, *s));
                    weights.push(wr * ws);
                }
            }
            (nodes, weights)
        }
        GridSpec::Gl3 { count, epsilon, seed } => {
            if *count == 0 || !(*epsilon > 0.0) {
                return Err(Error::UnsupportedResolution(format!(
                    "GL(3) grid needs count ≥ 1 and epsilon > 0, got {count}, {epsilon}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let nodes = (0..*count)
                .map(|_| {
                    let z = Matrix3::from_fn(|_, _| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        v
                    });
                    GroupElement::General(expm(&(z * *epsilon)))
                })
                .collect();
            (nodes, vec![1.0 / *count as f64; *count])
        }
        other => {
            return Err(Error::UnsupportedResolution(format!(
                "{other:?} is a manifold grid; use build_grid"
            )))
        }
    };
    Ok(QuadratureGrid { nodes, weights, spec: Some(spec.clone()) })
}

/// Group elements that permute the nodes of a grid built from `spec`:
/// azimuthal rotations for sphere-based and Euler grids, the identity otherwise.
pub fn grid_symmetries(spec: &GridSpec) -> Vec<GroupElement> {
    let azimuths = |n: usize, wrap: fn(Matrix3<f64>) -> GroupElement| {
        (0..n).map(|k| wrap(rot_z(2.0 * PI * k as f64 / n as f64))).collect()
    };
    match spec {
        GridSpec::Sphere { order } => azimuths(2 * order, GroupElement::Rotation),
        GridSpec::Product { order, .. } => azimuths(2 * order, |r| GroupElement::RotScale(r, 1.0)),
        GridSpec::So3 { n_alpha, .. } => azimuths(*n_alpha, GroupElement::Rotation),
        GridSpec::So3xScale { n_alpha, .. } => azimuths(*n_alpha, |r| GroupElement::RotScale(r, 1.0)),
        other => {
            let kind = other
                .space_kind()
                .map(|k| k.group_kind())
                .or_else(|| other.group_kind())
                .expect("every spec names a space or a group");
            vec![GroupElement::identity(kind)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_grid_area() {
        let g = build_grid(&GridSpec::Sphere { order: 8 }).unwrap();
        assert_eq!(g.len(), 128);
        assert!((g.total_weight() - 4.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn gauss_laguerre_integrates_exponential() {
        let (x, w) = gauss_laguerre_lebesgue(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * (-x).exp()).sum();
        assert!((s - 1.0).abs() < 1e-9);
        // x^5 e^{-x} integrates to 5! and is exact at order 6.
        let (x, w) = gauss_laguerre(6);
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(5)).sum();
        assert!((m - 120.0).abs() < 1e-9);
    }

    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn so3_grid_is_normalized() {
        let g = haar_grid(&GridSpec::So3 { n_alpha: 6, n_beta: 6, n_gamma: 6 }).unwrap();
        assert_eq!(g.len(), 216);
        assert!((g.total_weight() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scale_grid_powers_of_two() {
        let g = haar_grid(&GridSpec::Scale { scale: ScaleSpec::powers_of_two(-2, 2) }).unwrap();
        assert_eq!(g.len(), 5);
        assert!(g.weights().iter().all(|w| *w > 0.0));
        let s = g.nodes()[0].scale_part().unwrap();
        assert!((s - 0.25).abs() < 1e-15);
    }

    #[test]
    fn resolution_below_two_is_rejected() {
        assert!(matches!(
            build_grid(&GridSpec::Sphere { order: 1 }),
            Err(Error::UnsupportedResolution(_))
        ));
        assert!(matches!(
            haar_grid(&GridSpec::So3 { n_alpha: 1, n_beta: 4, n_gamma: 4 }),
            Err(Error::UnsupportedResolution(_))
        ));
        assert!(haar_grid(&GridSpec::Sphere { order: 4 }).is_err());
    }

    #[test]
    fn radial_grid_integrates_invariant_density() {
        // ∫ r³ e^{-r} dr/r = 2
        let g = build_grid(&GridSpec::HalfLine { radial: RadialSpec::new(64) }).unwrap();
        let s = g.integrate(|x| {
            let r = x.radius().unwrap();
            r.powi(3) * (-r).exp()
        });
        assert!((s - 2.0).abs() < 1e-9, "{s}");
    }
}
