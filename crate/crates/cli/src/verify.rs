//! Invariant checks run by `hcnn verify`. Each returns a [`Check`] with the
//! measured value and the tolerance it is held to.

use std::f64::consts::PI;
use std::sync::Arc;

use hcnn::correlation::{
    apply_identified, correlate, equivariance_residual, grid_permutation, identify_mask, CorrelationSystem,
    IdentifiedMask, IdentifyOptions, TranslationMode,
};
use hcnn::geometry::linalg::rot_z;
use hcnn::geometry::space::random_rotation;
use hcnn::geometry::{
    build_grid, grid_symmetries, haar_grid, GridSpec, GroupElement, HomogeneousSpace, ManifoldPoint,
    QuadratureGrid, RadialSpec, ScaleSpec, SpaceKind,
};
use hcnn::network::{finite_difference_check, input_grid, Architecture, Network, NetworkSpec};
use hcnn::signal::{
    gram_matrix, induce_basis, manifold_anchors, Basis, BumpMask, CircleFourier, GramReport, InducedBasis,
    RadialBasis, RandomRotationFunctions, SampledFunction, ShoreBasis, SphericalHarmonics,
};
use ndarray::{Array, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::VerifySection;
use hcnn::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Passes when `measured < tolerance`.
    Below,
    /// Passes when `measured > tolerance`.
    Above,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, measured: f64, tolerance: f64) -> Check {
        Check { name: name.into(), measured, tolerance, bound: Bound::Below, passed: measured < tolerance }
    }

    fn above(name: &str, measured: f64, tolerance: f64) -> Check {
        Check { name: name.into(), measured, tolerance, bound: Bound::Above, passed: measured > tolerance }
    }

    fn failed(name: &str, tolerance: f64, bound: Bound) -> Check {
        Check { name: name.into(), measured: f64::NAN, tolerance, bound, passed: false }
    }
}

fn or_fail(name: &str, tolerance: f64, bound: Bound, r: hcnn::Result<Check>) -> Check {
    r.unwrap_or_else(|_| Check::failed(name, tolerance, bound))
}

/// Resolution of the equivariance checks on `S²×R⁺`.
#[derive(Clone, Debug)]
pub struct EquivarianceSetup {
    pub grid_order: usize,
    pub radial_nodes: usize,
    /// Signals use degrees below this band limit.
    pub band_limit: usize,
    pub radial_order: usize,
    pub anchors: usize,
    pub tau: f64,
}

impl Default for EquivarianceSetup {
    fn default() -> Self {
        EquivarianceSetup { grid_order: 16, radial_nodes: 48, band_limit: 6, radial_order: 3, anchors: 4, tau: 0.5 }
    }
}

/// Worst residuals over `pairs` random band-limited signals and random masks:
/// `(grid-preserving rotations, arbitrary rotations and rotation-scalings)`.
pub fn equivariance_residuals(
    setup: &EquivarianceSetup,
    pairs: usize,
    seed: u64,
    mode: TranslationMode,
) -> hcnn::Result<(f64, f64)> {
    let spec = GridSpec::Product { order: setup.grid_order, radial: RadialSpec::new(setup.radial_nodes) };
    let grid = Arc::new(build_grid(&spec)?);
    let basis: Arc<dyn Basis<ManifoldPoint>> =
        Arc::new(ShoreBasis { l_max: setup.band_limit.saturating_sub(1), n_radial: setup.radial_order });
    let out_spec = GridSpec::So3xScale { n_alpha: 4, n_beta: 2, n_gamma: 2, scale: ScaleSpec::powers_of_two(-1, 1) };
    let out = haar_grid(&out_spec)?;
    // Rotations permuting both the input and the output grid, identity excluded.
    let mut symmetries = Vec::new();
    for g in grid_symmetries(&out_spec).into_iter().skip(1) {
        if grid_permutation(&grid, &g)?.is_some() {
            symmetries.push(g);
        }
    }
    if symmetries.is_empty() {
        return Err(hcnn::Error::ProbeFailure("input and output grids share no rotation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sym, mut arb) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let c = Array::from_shape_fn((1, basis.len()), |_| rng.random_range(-1.0..1.0));
        let f = SampledFunction::synthesize(grid.clone(), basis.clone(), c)?;
        let anchors = manifold_anchors(SpaceKind::ProductS2RPlus, setup.anchors, 0.5, &mut rng);
        let w = BumpMask::xavier(anchors, setup.tau, 1, 1, &mut rng)?;
        let g = &symmetries[rng.random_range(0..symmetries.len())];
        sym = sym.max(equivariance_residual(&f, &w, g, &out, mode)?);
        let rotation = GroupElement::rot_scale(random_rotation(&mut rng), 1.0)?;
        let scaled = GroupElement::rot_scale(random_rotation(&mut rng), rng.random_range(0.5..2.0))?;
        for g in [rotation, scaled] {
            arb = arb.max(equivariance_residual(&f, &w, &g, &out, mode)?);
        }
    }
    Ok((sym, arb))
}

/// Identifies the mask of a correlation with `anchors` random bumps from its
/// impulse responses on `S²×R⁺`, then compares re-application against direct
/// correlation on `signals` random inputs. Returns
/// `(closure error, linearity residual)`.
pub fn closure_residual(anchors: usize, signals: usize, seed: u64) -> hcnn::Result<(f64, f64)> {
    let spec = GridSpec::Product { order: 5, radial: RadialSpec { nodes: 10, log_min: -2.0, log_max: 2.0 } };
    let grid = Arc::new(build_grid(&spec)?);
    let sym = grid_symmetries(&spec);
    let out = Arc::new(QuadratureGrid::from_parts(sym.clone(), vec![1.0; sym.len()])?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = BumpMask::xavier(manifold_anchors(SpaceKind::ProductS2RPlus, anchors, 0.8, &mut rng), 0.6, 1, 1, &mut rng)?;
    let system = CorrelationSystem { mask: mask.clone(), input: grid.clone(), output: out.clone() };
    let opts = IdentifyOptions { probes: sym[1..3].to_vec(), full_sweep: false, seed: rng.random(), trials: 2 };
    let id: IdentifiedMask<ManifoldPoint> = identify_mask(&system, &opts)?;
    let mut worst = 0.0f64;
    for _ in 0..signals {
        let f = SampledFunction::new(grid.clone(), Array::from_shape_fn((1, grid.len()), |_| rng.random_range(-1.0..1.0)))?;
        let direct = correlate(&f, &mask, out.nodes())?;
        let again = apply_identified(&id, &f)?;
        worst = worst.max((direct - again).iter().fold(0.0f64, |m, d| m.max(d.abs())));
    }
    Ok((worst, id.linearity_residual))
}

/// `max |G − I|` for real harmonics of degree `< order` on the order-`order` sphere grid.
pub fn harmonic_gram_error(order: usize) -> hcnn::Result<f64> {
    let grid = build_grid(&GridSpec::Sphere { order })?;
    let g = gram_matrix(&SphericalHarmonics { l_max: order - 1 }, grid.nodes(), grid.weights())?;
    Ok(GramReport::new(g).identity_error)
}

/// `max |G − I|` for the first `count` radial functions on the half-line.
pub fn radial_gram_error(count: usize) -> hcnn::Result<f64> {
    let grid = build_grid(&GridSpec::HalfLine { radial: RadialSpec::new(64) })?;
    let g = gram_matrix(&RadialBasis { count }, grid.nodes(), grid.weights())?;
    Ok(GramReport::new(g).identity_error)
}

/// Largest off-diagonal Gram entry of the Fourier family on `S¹ = SO(2)/{e}`
/// induced through the identity section, on `n` equispaced nodes.
pub fn circle_induced_off_diagonal(k_max: usize, n: usize) -> hcnn::Result<f64> {
    let fourier: Arc<dyn Basis<f64>> = Arc::new(CircleFourier { k_max });
    let induced = InducedBasis::new(fourier, |t: &f64| Ok(*t));
    let (x, w) = hcnn::signal::circle_grid(n);
    Ok(GramReport::new(gram_matrix(&induced, &x, &w)?).max_off_diagonal)
}

/// Smallest singular value of the Gram matrix of `count` seeded rotation
/// functions induced on `S²`.
pub fn sphere_induced_min_singular(count: usize, order: usize, seed: u64) -> hcnn::Result<f64> {
    let space = HomogeneousSpace::new(SpaceKind::Sphere2);
    let group: Arc<dyn Basis<GroupElement>> = Arc::new(RandomRotationFunctions::new(count, seed));
    let induced = induce_basis(group, &space);
    let grid = build_grid(&GridSpec::Sphere { order })?;
    Ok(GramReport::new(gram_matrix(&induced, grid.nodes(), grid.weights())?).min_singular_value)
}

/// Worst relative finite-difference error over every parameter of the
/// miniature network.
pub fn miniature_gradient_error(seed: u64) -> hcnn::Result<f64> {
    let spec = NetworkSpec::miniature(seed);
    let mut net = Network::build(&spec)?;
    let grid = input_grid(&spec)?;
    let voxels = match &spec.architecture {
        Architecture::Dmri { roi_dims, .. } => roi_dims.iter().product::<usize>(),
        Architecture::Spd { .. } => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "inputs"));
    let batch = 4;
    let x = vec![Array3::from_shape_fn((batch * voxels, 1, grid.len()), |_| rng.random_range(0.0..1.0))];
    finite_difference_check(&mut net, &x, &[0, 1, 1, 0], 1e-5, 1e-4)
}

/// `max |Φ(L★^g f) − L★^g Φ(f)|` for the correlation ladder of the
/// miniature network, with `g` a half turn about z that permutes both the
/// input and the group grid.
pub fn ladder_equivariance(seed: u64) -> hcnn::Result<f64> {
    let spec = NetworkSpec::miniature(seed);
    let mut net = Network::build(&spec)?;
    let Architecture::Dmri { group_grid, .. } = &spec.architecture else { unreachable!("miniature is a voxel net") };
    let out = haar_grid(group_grid)?;
    let grid = input_grid(&spec)?;
    let ginv = GroupElement::rot_scale(rot_z(PI), 1.0)?.inverse()?;
    let missing = || hcnn::Error::ProbeFailure("half turn does not permute the grids".into());
    let pin = grid_permutation(&grid, &ginv)?.ok_or_else(missing)?;
    let pout = grid_permutation(&out, &ginv)?.ok_or_else(missing)?;
    let depth = net.branches()[0].iter().position(|l| l.name() == "mean").unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "inputs"));
    let x = Array3::from_shape_fn((6, 1, grid.len()), |_| rng.random_range(0.0..1.0));
    let xt = Array3::from_shape_fn(x.dim(), |(b, c, i)| x[[b, c, pin[i]]]);
    let y = net.forward_branch_prefix(0, depth, &x, false)?;
    let yt = net.forward_branch_prefix(0, depth, &xt, false)?;
    Ok(yt.indexed_iter().map(|((b, c, j), v)| (v - y[[b, c, pout[j]]]).abs()).fold(0.0, f64::max))
}

fn quadrature_errors() -> hcnn::Result<(f64, f64)> {
    let sphere = build_grid(&GridSpec::Sphere { order: 12 })?;
    // ∫ z² dΩ = 4π/3 is exact for this rule.
    let z2 = sphere.integrate(|p| p.direction().map_or(0.0, |v| v.z * v.z));
    let area = (sphere.total_weight() - 4.0 * PI).abs().max((z2 - 4.0 * PI / 3.0).abs());
    let haar = haar_grid(&GridSpec::So3 { n_alpha: 6, n_beta: 5, n_gamma: 6 })?;
    Ok((area, (haar.total_weight() - 1.0).abs()))
}

/// Runs the suite. `break_equivariance` reads translated outputs from the
/// nearest stored sample instead of recomputing them, which must fail.
pub fn run_suite(settings: &VerifySection, seed: u64, break_equivariance: bool) -> Vec<Check> {
    let mode = if break_equivariance { TranslationMode::NearestOutput } else { TranslationMode::Exact };
    let mut checks = Vec::new();
    match quadrature_errors() {
        Ok((sphere, haar)) => {
            checks.push(Check::below("quadrature_sphere_moments", sphere, 1e-12));
            checks.push(Check::below("quadrature_haar_mass", haar, 1e-12));
        }
        Err(_) => {
            checks.push(Check::failed("quadrature_sphere_moments", 1e-12, Bound::Below));
            checks.push(Check::failed("quadrature_haar_mass", 1e-12, Bound::Below));
        }
    }
    checks.push(or_fail("harmonic_gram_identity", 1e-9, Bound::Below, harmonic_gram_error(16).map(|e| Check::below("harmonic_gram_identity", e, 1e-9))));
    checks.push(or_fail("radial_gram_identity", 1e-9, Bound::Below, radial_gram_error(4).map(|e| Check::below("radial_gram_identity", e, 1e-9))));
    checks.push(or_fail(
        "circle_induced_gram_diagonal",
        1e-10,
        Bound::Below,
        circle_induced_off_diagonal(4, 16).map(|e| Check::below("circle_induced_gram_diagonal", e, 1e-10)),
    ));
    checks.push(or_fail(
        "sphere_induced_full_rank",
        1e-6,
        Bound::Above,
        sphere_induced_min_singular(10, 8, derive_seed(seed, "induced")).map(|s| Check::above("sphere_induced_full_rank", s, 1e-6)),
    ));
    let setup = EquivarianceSetup::default();
    match equivariance_residuals(&setup, settings.equivariance_pairs, derive_seed(seed, "equivariance"), mode) {
        Ok((sym, arb)) => {
            checks.push(Check::below("equivariance_grid_rotations", sym, 1e-12));
            checks.push(Check::below("equivariance_arbitrary_elements", arb, 1e-6));
        }
        Err(_) => {
            checks.push(Check::failed("equivariance_grid_rotations", 1e-12, Bound::Below));
            checks.push(Check::failed("equivariance_arbitrary_elements", 1e-6, Bound::Below));
        }
    }
    match closure_residual(16, settings.closure_signals, derive_seed(seed, "closure")) {
        Ok((closure, linear)) => {
            checks.push(Check::below("identified_mask_closure", closure, 1e-9));
            checks.push(Check::below("identified_system_linearity", linear, 1e-12));
        }
        Err(_) => {
            checks.push(Check::failed("identified_mask_closure", 1e-9, Bound::Below));
            checks.push(Check::failed("identified_system_linearity", 1e-12, Bound::Below));
        }
    }
    checks.push(or_fail(
        "gradient_finite_differences",
        1e-5,
        Bound::Below,
        miniature_gradient_error(derive_seed(seed, "gradients")).map(|e| Check::below("gradient_finite_differences", e, 1e-5)),
    ));
    checks.push(or_fail(
        "ladder_equivariance",
        1e-10,
        Bound::Below,
        ladder_equivariance(derive_seed(seed, "ladder")).map(|e| Check::below("ladder_equivariance", e, 1e-10)),
    ));
    checks
}

/// Tab-separated report, one row per check.
pub fn report_tsv(checks: &[Check]) -> String {
    let mut s = String::from("check\tmeasured\tbound\ttolerance\tpassed\n");
    for c in checks {
        let bound = match c.bound {
            Bound::Below => "<",
            Bound::Above => ">",
        };
        s.push_str(&format!("{}\t{:.6e}\t{bound}\t{:e}\t{}\n", c.name, c.measured, c.tolerance, c.passed));
    }
    s
}
