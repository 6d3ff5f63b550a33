//! Correlation of sampled functions with bump masks over a set of group
//! elements, equivariance residuals, and mask identification from impulse
//! responses.

mod identify;
mod plan;

pub use identify::{
    apply_identified, identify_mask, CorrelationSystem, IdentifiedMask, IdentifyOptions,
    LinearSystem, ShiftedSystem, ZeroSystem,
};
pub use plan::{CorrPlan, PlanCache};

use std::sync::Arc;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::geometry::{GroupElement, GroupGrid, ManifoldPoint, QuadratureGrid, Site};
use crate::signal::{BumpMask, BumpRows, GroupFunction, SampledFunction};

fn check_compatible<S: Site>(
    f: &SampledFunction<S>,
    w: &BumpMask<S>,
    elements: &[GroupElement],
) -> Result<()> {
    let group = f.grid().nodes()[0].acting_group();
    if w.domain_group() != group {
        return Err(Error::InvalidArgument(format!(
            "mask lives on a {:?} domain, function on a {group:?} domain",
            w.domain_group()
        )));
    }
    if let Some(g) = elements.iter().find(|g| g.kind() != group) {
        return Err(Error::InvalidArgument(format!(
            "output element of {:?} does not act on a {group:?} domain",
            g.kind()
        )));
    }
    if f.channels() != w.channels_in() {
        return Err(Error::ShapeMismatch(format!(
            "{} input channels for a mask expecting {}",
            f.channels(),
            w.channels_in()
        )));
    }
    Ok(())
}

/// Sensitivities `P[c', j, k] = Σᵢ wᵢ f_{c'}(xᵢ) exp(−d²(g_j⁻¹.xᵢ, a_k)/2τ²)`:
/// the derivative of output `(c, j)` with respect to coefficient `(c, c', k)`.
pub fn sensitivities<S: Site>(
    f: &SampledFunction<S>,
    w: &BumpMask<S>,
    elements: &[GroupElement],
) -> Result<Array3<f64>> {
    check_compatible(f, w, elements)?;
    let rows = BumpRows::new(f.grid().clone(), w.tau());
    let k = w.anchors().len();
    let n = f.grid().len();
    let cin = f.channels();
    let mut p = Array3::zeros((cin, elements.len(), k));
    let mut row = vec![0.0; n];
    for (j, g) in elements.iter().enumerate() {
        for (ka, a) in w.anchors().iter().enumerate() {
            rows.fill(&a.translate(g)?, &mut row)?;
            for c in 0..cin {
                let fc = f.values().row(c);
                let fc = fc.as_slice().expect("row-major values");
                p[[c, j, ka]] = fc.iter().zip(&row).map(|(a, b)| a * b).sum();
            }
        }
    }
    Ok(p)
}

/// `(f ⋆ w)(g_j) = Σᵢ wᵢ f(xᵢ) w(g_j⁻¹.xᵢ)` for each element, summing input
/// channels: output shape `channels_out × J`.
pub fn correlate<S: Site>(
    f: &SampledFunction<S>,
    w: &BumpMask<S>,
    elements: &[GroupElement],
) -> Result<Array2<f64>> {
    let p = sensitivities(f, w, elements)?;
    let (cout, cin, k) = w.coefficients().dim();
    let mut out = Array2::zeros((cout, elements.len()));
    for c in 0..cout {
        for j in 0..elements.len() {
            let mut acc = 0.0;
            for ci in 0..cin {
                for ka in 0..k {
                    acc += w.coefficients()[[c, ci, ka]] * p[[ci, j, ka]];
                }
            }
            out[[c, j]] = acc;
        }
    }
    Ok(out)
}

fn corr_on_grid<S: Site>(
    f: &SampledFunction<S>,
    w: &BumpMask<S>,
    out_grid: &Arc<GroupGrid>,
) -> Result<GroupFunction> {
    let values = correlate(f, w, out_grid.nodes())?;
    SampledFunction::new(out_grid.clone(), values)
}

/// Correlation of a function on a homogeneous space, sampled on `out_grid`.
pub fn corr_manifold(
    f: &SampledFunction<ManifoldPoint>,
    w: &BumpMask<ManifoldPoint>,
    out_grid: &Arc<GroupGrid>,
) -> Result<GroupFunction> {
    corr_on_grid(f, w, out_grid)
}

/// Correlation of a function on a group, sampled on `out_grid`.
pub fn corr_group(
    f: &GroupFunction,
    w: &BumpMask<GroupElement>,
    out_grid: &Arc<GroupGrid>,
) -> Result<GroupFunction> {
    corr_on_grid(f, w, out_grid)
}

/// How the reference side `(f ⋆ w)(g⁻¹g_j)` of an equivariance residual is
/// obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TranslationMode {
    /// Recompute the quadrature sum at `g⁻¹g_j`.
    Exact,
    /// Read the stored output sample nearest to `g⁻¹g_j`. A deliberately
    /// wrong shortcut, kept as a negative control.
    NearestOutput,
}

/// `max_j |(L★^g f ⋆ w)(g_j) − (f ⋆ w)(g⁻¹g_j)|` over the output grid.
pub fn equivariance_residual<S: Site>(
    f: &SampledFunction<S>,
    w: &BumpMask<S>,
    g: &GroupElement,
    out_grid: &GroupGrid,
    mode: TranslationMode,
) -> Result<f64> {
    let moved = f.pushforward(g)?;
    let lhs = correlate(&moved, w, out_grid.nodes())?;
    let g_inv = g.inverse()?;
    let shifted = out_grid
        .nodes()
        .iter()
        .map(|gj| g_inv.compose(gj))
        .collect::<Result<Vec<_>>>()?;
    let rhs = match mode {
        TranslationMode::Exact => correlate(f, w, &shifted)?,
        TranslationMode::NearestOutput => {
            let base = correlate(f, w, out_grid.nodes())?;
            let mut out = Array2::zeros(base.dim());
            for (j, h) in shifted.iter().enumerate() {
                let nearest = nearest_node(out_grid, h)?;
                out.column_mut(j).assign(&base.column(nearest));
            }
            out
        }
    };
    Ok((lhs - rhs).iter().fold(0.0f64, |m, d| m.max(d.abs())))
}

fn nearest_node<S: Site>(grid: &QuadratureGrid<S>, x: &S) -> Result<usize> {
    let mut best = (f64::INFINITY, 0);
    for (i, n) in grid.nodes().iter().enumerate() {
        let d = n.distance_to(x)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best.1)
}

/// `perm[i]` = index of the node `g.xᵢ`, when `g` maps the grid onto itself.
pub fn grid_permutation<S: Site>(grid: &QuadratureGrid<S>, g: &GroupElement) -> Result<Option<Vec<usize>>> {
    let mut perm = Vec::with_capacity(grid.len());
    for x in grid.nodes() {
        match grid.find_node(&x.translate(g)?, 1e-9) {
            Some(i) => perm.push(i),
            None => return Ok(None),
        }
    }
    Ok(Some(perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::linalg::{euler_zyz, rot_z};
    use crate::geometry::{build_grid, grid_symmetries, haar_grid, GridSpec, GroupKind, RadialSpec, ScaleSpec, SpaceKind};
    use crate::signal::{group_anchors, manifold_anchors, Basis, ShoreBasis, SphericalHarmonics, lm_index};
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn identity_value_is_inner_product_and_zero_is_zero() {
        let grid = Arc::new(build_grid(&GridSpec::Sphere { order: 6 }).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = BumpMask::xavier(manifold_anchors(SpaceKind::Sphere2, 4, 0.0, &mut rng), 0.5, 1, 1, &mut rng).unwrap();
        let f = SampledFunction::new(grid.clone(), Array::from_shape_fn((1, grid.len()), |_| rng.random_range(-1.0..1.0))).unwrap();
        let e = GroupElement::identity(GroupKind::So3);
        let at_e = correlate(&f, &w, &[e]).unwrap()[[0, 0]];
        let direct: f64 = grid
            .nodes()
            .iter()
            .zip(grid.weights())
            .enumerate()
            .map(|(i, (x, wt))| wt * f.values()[[0, i]] * w.eval(x).unwrap()[[0, 0]])
            .sum();
        assert!((at_e - direct).abs() < 1e-13);
        let zero = SampledFunction::zeros(grid.clone(), 1);
        assert_eq!(max_abs(&correlate(&zero, &w, &[GroupElement::rotation(rot_z(1.0)).unwrap()]).unwrap()), 0.0);
    }

    #[test]
    fn narrow_bump_samples_the_signal() {
        let grid = Arc::new(build_grid(&GridSpec::Sphere { order: 40 }).unwrap());
        let basis = Arc::new(SphericalHarmonics { l_max: 1 });
        let mut c = Array2::zeros((1, basis.len()));
        c[[0, lm_index(1, 0)]] = 1.0;
        let f = SampledFunction::synthesize(grid.clone(), basis.clone(), c).unwrap();
        let north = ManifoldPoint::Sphere(nalgebra::Vector3::z());
        let w = BumpMask::new(vec![north.clone()], 0.05, Array3::ones((1, 1, 1))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gs: Vec<_> = (0..50)
            .map(|_| GroupElement::Rotation(crate::geometry::space::random_rotation(&mut rng)))
            .collect();
        let out = correlate(&f, &w, &gs).unwrap();
        let mass = correlate(&SampledFunction::new(grid.clone(), Array2::ones((1, grid.len()))).unwrap(), &w, &gs[..1]).unwrap()[[0, 0]];
        for (j, g) in gs.iter().enumerate() {
            let y = basis.eval(&north.act(g).unwrap()).unwrap()[lm_index(1, 0)];
            assert!((out[[0, j]] / mass - y).abs() < 5e-3, "{} vs {y}", out[[0, j]] / mass);
        }
    }

    #[test]
    fn linear_in_the_signal() {
        let grid = Arc::new(build_grid(&GridSpec::Sphere { order: 5 }).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = BumpMask::xavier(manifold_anchors(SpaceKind::Sphere2, 3, 0.0, &mut rng), 0.4, 2, 1, &mut rng).unwrap();
        let mut rf = || SampledFunction::new(grid.clone(), Array::from_shape_fn((1, grid.len()), |_| rng.random_range(-1.0..1.0))).unwrap();
        let (f1, f2) = (rf(), rf());
        let gs = vec![GroupElement::rotation(euler_zyz(0.2, 0.5, 0.9)).unwrap()];
        let lhs = correlate(&f1.linear_combination(1.5, &f2, -0.7).unwrap(), &w, &gs).unwrap();
        let rhs = correlate(&f1, &w, &gs).unwrap() * 1.5 - correlate(&f2, &w, &gs).unwrap() * 0.7;
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn group_correlation_commutes_with_grid_symmetries() {
        let spec = GridSpec::So3xScale { n_alpha: 4, n_beta: 3, n_gamma: 4, scale: ScaleSpec::powers_of_two(-1, 1) };
        let grid = Arc::new(haar_grid(&spec).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = BumpMask::xavier(group_anchors(GroupKind::So3xScale, 4, 0.4, &mut rng), 0.8, 2, 2, &mut rng).unwrap();
        let f = SampledFunction::new(grid.clone(), Array::from_shape_fn((2, grid.len()), |_| rng.random_range(-1.0..1.0))).unwrap();
        let base = corr_group(&f, &w, &grid).unwrap();
        for g in grid_symmetries(&spec) {
            let inv = grid_permutation(&grid, &g.inverse().unwrap()).unwrap().unwrap();
            let moved = f.permuted(&inv).unwrap();
            let out = corr_group(&moved, &w, &grid).unwrap();
            let expect = base.permuted(&inv).unwrap();
            assert!(max_abs(&(out.values() - expect.values())) < 1e-12);
        }
    }

    #[test]
    fn residuals_on_the_product_space() {
        let grid = Arc::new(build_grid(&GridSpec::Product { order: 10, radial: RadialSpec::new(48) }).unwrap());
        let basis: Arc<dyn Basis<ManifoldPoint>> = Arc::new(ShoreBasis { l_max: 4, n_radial: 3 });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Array::from_shape_fn((1, basis.len()), |_| rng.random_range(-1.0..1.0));
        let f = SampledFunction::synthesize(grid.clone(), basis, c).unwrap();
        let w = BumpMask::xavier(manifold_anchors(SpaceKind::ProductS2RPlus, 4, 0.3, &mut rng), 0.7, 1, 1, &mut rng).unwrap();
        let out = Arc::new(haar_grid(&GridSpec::So3xScale { n_alpha: 3, n_beta: 2, n_gamma: 3, scale: ScaleSpec::powers_of_two(-1, 1) }).unwrap());
        let id = GroupElement::identity(GroupKind::So3xScale);
        assert_eq!(equivariance_residual(&f, &w, &id, &out, TranslationMode::Exact).unwrap(), 0.0);
        let az = GroupElement::rot_scale(rot_z(2.0 * std::f64::consts::PI / 20.0), 1.0).unwrap();
        assert!(equivariance_residual(&f, &w, &az, &out, TranslationMode::Exact).unwrap() < 1e-12);
        let g = GroupElement::rot_scale(euler_zyz(0.4, 1.2, -0.3), 1.6).unwrap();
        let exact = equivariance_residual(&f, &w, &g, &out, TranslationMode::Exact).unwrap();
        assert!(exact < 1e-6, "{exact}");
        let lazy = equivariance_residual(&f, &w, &g, &out, TranslationMode::NearestOutput).unwrap();
        assert!(lazy > 1e-3, "{lazy}");
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let grid = Arc::new(build_grid(&GridSpec::Sphere { order: 5 }).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut w = BumpMask::xavier(manifold_anchors(SpaceKind::Sphere2, 3, 0.0, &mut rng), 0.5, 1, 1, &mut rng).unwrap();
        let f = SampledFunction::new(grid.clone(), Array::from_shape_fn((1, grid.len()), |_| rng.random_range(-1.0..1.0))).unwrap();
        let gs = vec![GroupElement::rotation(euler_zyz(0.1, 0.7, 2.0)).unwrap()];
        let p = sensitivities(&f, &w, &gs).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let c0 = w.coefficients()[[0, 0, k]];
            w.coefficients_mut()[[0, 0, k]] = c0 + h;
            let up = correlate(&f, &w, &gs).unwrap()[[0, 0]];
            w.coefficients_mut()[[0, 0, k]] = c0 - h;
            let down = correlate(&f, &w, &gs).unwrap()[[0, 0]];
            w.coefficients_mut()[[0, 0, k]] = c0;
            let fd = (up - down) / (2.0 * h);
            assert!(((fd - p[[0, 0, k]]) / p[[0, 0, k]]).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_domains_are_rejected() {
        let grid = Arc::new(build_grid(&GridSpec::Sphere { order: 3 }).unwrap());
        let f = SampledFunction::zeros(grid, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = BumpMask::xavier(manifold_anchors(SpaceKind::Sphere2, 2, 0.0, &mut rng), 0.5, 1, 1, &mut rng).unwrap();
        assert!(correlate(&f, &w, &[GroupElement::scale(2.0).unwrap()]).is_err());
    }
}
