//! Ordered function families on spaces and groups, and the section-induced
//! construction that pulls a group family down to a homogeneous space.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::harmonics::{harmonic_count, real_harmonics_into};
use super::radial::invariant_radial_into;
use crate::error::{Error, Result};
use crate::geometry::{GroupElement, HomogeneousSpace, ManifoldPoint};

/// An ordered family of real functions on points of type `P`.
pub trait Basis<P>: Debug + Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `v_α(x)` for every α into `out[..len]`.
    fn eval_into(&self, x: &P, out: &mut [f64]) -> Result<()>;

    fn eval(&self, x: &P) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}

/// Real spherical harmonics of degree `≤ l_max` on the sphere, degree-major.
#[derive(Clone, Debug)]
pub struct SphericalHarmonics {
    pub l_max: usize,
}

impl Basis<ManifoldPoint> for SphericalHarmonics {
    fn len(&self) -> usize {
        harmonic_count(self.l_max)
    }

    fn eval_into(&self, x: &ManifoldPoint, out: &mut [f64]) -> Result<()> {
        match x {
            ManifoldPoint::Sphere(v) => {
                real_harmonics_into(self.l_max, v, out);
                Ok(())
            }
            other => Err(Error::InvalidArgument(format!(
                "spherical harmonics need a sphere point, got {:?}",
                other.kind()
            ))),
        }
    }
}

/// The invariant radial family `φ_0 … φ_{count-1}` on the half-line.
#[derive(Clone, Debug)]
pub struct RadialBasis {
    pub count: usize,
}

impl Basis<ManifoldPoint> for RadialBasis {
    fn len(&self) -> usize {
        self.count
    }

    fn eval_into(&self, x: &ManifoldPoint, out: &mut [f64]) -> Result<()> {
        match x {
            ManifoldPoint::HalfLine(r) => {
                invariant_radial_into(*r, &mut out[..self.count]);
                Ok(())
            }
            other => Err(Error::InvalidArgument(format!(
                "radial basis needs a half-line point, got {:?}",
                other.kind()
            ))),
        }
    }
}

/// Products `Y_l^m · φ_n` on `S² × R⁺`, ordered `(n, l, m)` lexicographically.
#[derive(Clone, Debug)]
pub struct ShoreBasis {
    pub l_max: usize,
    pub n_radial: usize,
}

/// SHORE-style product basis with `n_radial · (l_max + 1)²` elements.
pub fn shore_basis(l_max: usize, n_radial: usize) -> Result<ShoreBasis> {
    if n_radial == 0 {
        return Err(Error::InvalidArgument("radial order must be at least 1".into()));
    }
    Ok(ShoreBasis { l_max, n_radial })
}

impl Basis<ManifoldPoint> for ShoreBasis {
    fn len(&self) -> usize {
        self.n_radial * harmonic_count(self.l_max)
    }

    fn eval_into(&self, x: &ManifoldPoint, out: &mut [f64]) -> Result<()> {
        let ManifoldPoint::Product(v, r) = x else {
            return Err(Error::InvalidArgument(format!(
                "product basis needs a point of S²×R⁺, got {:?}",
                x.kind()
            )));
        };
        let h = harmonic_count(self.l_max);
        let mut ylm = vec![0.0; h];
        let mut rad = vec![0.0; self.n_radial];
        real_harmonics_into(self.l_max, v, &mut ylm);
        invariant_radial_into(*r, &mut rad);
        for (n, rn) in rad.iter().enumerate() {
            for (i, y) in ylm.iter().enumerate() {
                out[n * h + i] = rn * y;
            }
        }
        Ok(())
    }
}

/// Orthonormal Fourier family on the circle (angles in radians):
/// `1/√(2π)`, then `cos kθ/√π`, `sin kθ/√π` for `k = 1..=k_max`.
#[derive(Clone, Debug)]
pub struct CircleFourier {
    pub k_max: usize,
}

impl Basis<f64> for CircleFourier {
    fn len(&self) -> usize {
        1 + 2 * self.k_max
    }

    fn eval_into(&self, theta: &f64, out: &mut [f64]) -> Result<()> {
        out[0] = 1.0 / (2.0 * PI).sqrt();
        let c = 1.0 / PI.sqrt();
        for k in 1..=self.k_max {
            let (s, co) = (k as f64 * theta).sin_cos();
            out[2 * k - 1] = c * co;
            out[2 * k] = c * s;
        }
        Ok(())
    }
}

/// Uniform circle quadrature: `n` equispaced angles with weight `2π/n`.
pub fn circle_grid(n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * PI / n as f64;
    ((0..n).map(|i| i as f64 * h).collect(), vec![h; n])
}

/// Seeded smooth functions on SO(3): `v_α(R) = exp(⟨A_α, R⟩_F)` with Gaussian `A_α`.
#[derive(Clone, Debug)]
pub struct RandomRotationFunctions {
    mats: Vec<Matrix3<f64>>,
}

impl RandomRotationFunctions {
    pub fn new(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.5).expect("valid normal");
        let mats = (0..count)
            .map(|_| Matrix3::from_fn(|_, _| normal.sample(&mut rng)))
            .collect();
        RandomRotationFunctions { mats }
    }
}

impl Basis<GroupElement> for RandomRotationFunctions {
    fn len(&self) -> usize {
        self.mats.len()
    }

    fn eval_into(&self, g: &GroupElement, out: &mut [f64]) -> Result<()> {
        let r = g
            .rotation_part()
            .ok_or_else(|| Error::InvalidArgument("rotation functions need a rotation".into()))?;
        for (o, a) in out.iter_mut().zip(&self.mats) {
            *o = a.component_mul(r).sum().exp();
        }
        Ok(())
    }
}

type SectionFn<M, G> = dyn Fn(&M) -> Result<G> + Send + Sync;

/// `ṽ_α = v_α ∘ section`: a group family pulled back to a space.
pub struct InducedBasis<M, G> {
    group_basis: Arc<dyn Basis<G>>,
    section: Arc<SectionFn<M, G>>,
}

impl<M, G> Debug for InducedBasis<M, G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InducedBasis").field("group_basis", &self.group_basis).finish()
    }
}

impl<M, G> InducedBasis<M, G> {
    pub fn new(
        group_basis: Arc<dyn Basis<G>>,
        section: impl Fn(&M) -> Result<G> + Send + Sync + 'static,
    ) -> Self {
        InducedBasis { group_basis, section: Arc::new(section) }
    }
}

impl<M, G> Basis<M> for InducedBasis<M, G> {
    fn len(&self) -> usize {
        self.group_basis.len()
    }

    fn eval_into(&self, x: &M, out: &mut [f64]) -> Result<()> {
        let g = (self.section)(x)?;
        self.group_basis.eval_into(&g, out)
    }
}

/// Pulls a group family down to `space` through its section.
pub fn induce_basis(
    group_basis: Arc<dyn Basis<GroupElement>>,
    space: &HomogeneousSpace,
) -> InducedBasis<ManifoldPoint, GroupElement> {
    let space = space.clone();
    InducedBasis::new(group_basis, move |x: &ManifoldPoint| space.section(x))
}

/// Quadrature Gram matrix `G_{αβ} = Σ_i w_i v_α(x_i) v_β(x_i)`.
pub fn gram_matrix<P>(basis: &dyn Basis<P>, nodes: &[P], weights: &[f64]) -> Result<DMatrix<f64>> {
    if nodes.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} nodes with {} weights",
            nodes.len(),
            weights.len()
        )));
    }
    let n = basis.len();
    let mut gram = DMatrix::zeros(n, n);
    let mut v = vec![0.0; n];
    for (x, w) in nodes.iter().zip(weights) {
        basis.eval_into(x, &mut v)?;
        for a in 0..n {
            let wa = w * v[a];
            for b in a..n {
                gram[(a, b)] += wa * v[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    Ok(gram)
}

/// Summary of a Gram matrix: how far from the identity, how far from
/// diagonal, and how well conditioned.
#[derive(Clone, Debug)]
pub struct GramReport {
    pub gram: DMatrix<f64>,
    pub identity_error: f64,
    pub max_off_diagonal: f64,
    pub min_singular_value: f64,
    pub rank: usize,
}

impl GramReport {
    pub fn new(gram: DMatrix<f64>) -> Self {
        let n = gram.nrows();
        let mut identity_error = 0.0f64;
        let mut max_off_diagonal = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let e = if a == b { 1.0 } else { 0.0 };
                identity_error = identity_error.max((gram[(a, b)] - e).abs());
                if a != b {
                    max_off_diagonal = max_off_diagonal.max(gram[(a, b)].abs());
                }
            }
        }
        let sv = gram.clone().svd(false, false).singular_values;
        let top = sv.max();
        let min_singular_value = if n == 0 { 0.0 } else { sv.min() };
        let rank = sv.iter().filter(|s| **s > top * 1e-12).count();
        GramReport { gram, identity_error, max_off_diagonal, min_singular_value, rank }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, GridSpec, RadialSpec, SpaceKind};
    use crate::signal::harmonics::lm_index;

    fn legendre(l: usize, x: f64) -> f64 {
        let (mut p0, mut p1) = (1.0, x);
        if l == 0 {
            return 1.0;
        }
        for k in 2..=l {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        p1
    }

    #[test]
    fn harmonic_closed_forms_and_addition_theorem() {
        use crate::geometry::space::random_unit_vector;
        let north = nalgebra::Vector3::z();
        let sh = SphericalHarmonics { l_max: 6 };
        let y = sh.eval(&ManifoldPoint::Sphere(north)).unwrap();
        assert!((y[0] - 0.5 / PI.sqrt()).abs() < 1e-15);
        assert!((y[lm_index(1, 0)] - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b) = (random_unit_vector(&mut rng), random_unit_vector(&mut rng));
            let ya = sh.eval(&ManifoldPoint::Sphere(a)).unwrap();
            let yb = sh.eval(&ManifoldPoint::Sphere(b)).unwrap();
            for l in 0..=6usize {
                let s: f64 = (-(l as i64)..=l as i64)
                    .map(|m| ya[lm_index(l, m)] * yb[lm_index(l, m)])
                    .sum();
                let expect = (2 * l + 1) as f64 / (4.0 * PI) * legendre(l, a.dot(&b));
                assert!((s - expect).abs() < 1e-9, "l={l}");
            }
        }
    }

    #[test]
    fn harmonic_gram_is_identity_below_grid_order() {
        let grid = build_grid(&GridSpec::Sphere { order: 10 }).unwrap();
        let g = gram_matrix(&SphericalHarmonics { l_max: 9 }, grid.nodes(), grid.weights()).unwrap();
        assert!(GramReport::new(g).identity_error < 1e-9);
    }

    #[test]
    fn shore_gram_is_identity() {
        let basis = shore_basis(4, 3).unwrap();
        assert_eq!(basis.len(), 75);
        let grid = build_grid(&GridSpec::Product { order: 5, radial: RadialSpec::new(64) }).unwrap();
        let g = gram_matrix(&basis, grid.nodes(), grid.weights()).unwrap();
        assert!(GramReport::new(g).identity_error < 1e-9);
    }

    #[test]
    fn circle_induced_basis_is_orthonormal() {
        let fourier: Arc<dyn Basis<f64>> = Arc::new(CircleFourier { k_max: 4 });
        let induced = InducedBasis::new(fourier, |t: &f64| Ok(*t));
        let (x, w) = circle_grid(16);
        let r = GramReport::new(gram_matrix(&induced, &x, &w).unwrap());
        assert!(r.max_off_diagonal < 1e-10);
        assert!(r.identity_error < 1e-10);
    }

    #[test]
    fn induced_rotation_functions_are_independent_on_sphere() {
        let space = HomogeneousSpace::new(SpaceKind::Sphere2);
        let group: Arc<dyn Basis<GroupElement>> = Arc::new(RandomRotationFunctions::new(10, 7));
        let induced = induce_basis(group.clone(), &space);
        let grid = build_grid(&GridSpec::Sphere { order: 8 }).unwrap();
        let r = GramReport::new(gram_matrix(&induced, grid.nodes(), grid.weights()).unwrap());
        assert_eq!(r.rank, 10);
        assert!(r.min_singular_value > 1e-6);
        let at_origin = induced.eval(space.origin()).unwrap();
        let at_identity = group.eval(&GroupElement::identity(space.group_kind())).unwrap();
        assert_eq!(at_origin, at_identity);
    }
}
