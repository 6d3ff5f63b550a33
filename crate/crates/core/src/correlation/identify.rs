//! Recovering a correlation mask from the impulse responses of a linear,
//! equivariant system.

use std::sync::Arc;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{correlate, grid_permutation};
use crate::error::{Error, Result};
use crate::geometry::{GroupElement, GroupGrid, QuadratureGrid, Site};
use crate::signal::{BumpMask, SampledFunction};

/// A map from sampled functions to functions on a group, claimed linear and
/// equivariant by whoever provides it.
pub trait LinearSystem<S: Site> {
    fn channels_in(&self) -> usize;
    fn channels_out(&self) -> usize;
    fn input_grid(&self) -> &Arc<QuadratureGrid<S>>;
    fn output_grid(&self) -> &Arc<GroupGrid>;
    /// `F(f)(g)` for each `g`, shape `channels_out × elements`.
    fn apply_at(&self, f: &SampledFunction<S>, elements: &[GroupElement]) -> Result<Array2<f64>>;

    fn apply(&self, f: &SampledFunction<S>) -> Result<Array2<f64>> {
        self.apply_at(f, self.output_grid().nodes())
    }
}

/// `f ↦ f ⋆ w`.
#[derive(Clone, Debug)]
pub struct CorrelationSystem<S> {
    pub mask: BumpMask<S>,
    pub input: Arc<QuadratureGrid<S>>,
    pub output: Arc<GroupGrid>,
}

impl<S: Site> LinearSystem<S> for CorrelationSystem<S> {
    fn channels_in(&self) -> usize {
        self.mask.channels_in()
    }
    fn channels_out(&self) -> usize {
        self.mask.channels_out()
    }
    fn input_grid(&self) -> &Arc<QuadratureGrid<S>> {
        &self.input
    }
    fn output_grid(&self) -> &Arc<GroupGrid> {
        &self.output
    }
    fn apply_at(&self, f: &SampledFunction<S>, elements: &[GroupElement]) -> Result<Array2<f64>> {
        correlate(f, &self.mask, elements)
    }
}

/// The zero operator.
#[derive(Clone, Debug)]
pub struct ZeroSystem<S> {
    pub channels_in: usize,
    pub channels_out: usize,
    pub input: Arc<QuadratureGrid<S>>,
    pub output: Arc<GroupGrid>,
}

impl<S: Site> LinearSystem<S> for ZeroSystem<S> {
    fn channels_in(&self) -> usize {
        self.channels_in
    }
    fn channels_out(&self) -> usize {
        self.channels_out
    }
    fn input_grid(&self) -> &Arc<QuadratureGrid<S>> {
        &self.input
    }
    fn output_grid(&self) -> &Arc<GroupGrid> {
        &self.output
    }
    fn apply_at(&self, _f: &SampledFunction<S>, elements: &[GroupElement]) -> Result<Array2<f64>> {
        Ok(Array2::zeros((self.channels_out, elements.len())))
    }
}

/// `F(f) + constant`: equivariant but affine, not linear.
pub struct ShiftedSystem<S: Site> {
    pub inner: Box<dyn LinearSystem<S>>,
    pub constant: f64,
}

impl<S: Site> LinearSystem<S> for ShiftedSystem<S> {
    fn channels_in(&self) -> usize {
        self.inner.channels_in()
    }
    fn channels_out(&self) -> usize {
        self.inner.channels_out()
    }
    fn input_grid(&self) -> &Arc<QuadratureGrid<S>> {
        self.inner.input_grid()
    }
    fn output_grid(&self) -> &Arc<GroupGrid> {
        self.inner.output_grid()
    }
    fn apply_at(&self, f: &SampledFunction<S>, elements: &[GroupElement]) -> Result<Array2<f64>> {
        Ok(self.inner.apply_at(f, elements)? + self.constant)
    }
}

#[derive(Clone, Debug)]
pub struct IdentifyOptions {
    /// Group elements that permute the input grid; used for the
    /// equivariance residual.
    pub probes: Vec<GroupElement>,
    /// Also tabulate `F(u_y)(g)` at every `(g, y)` of the output grid.
    pub full_sweep: bool,
    /// Seed for the random signals of the linearity and equivariance checks.
    pub seed: u64,
    /// Number of random signal pairs in the checks.
    pub trials: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions { probes: Vec::new(), full_sweep: false, seed: 0, trials: 3 }
    }
}

/// A mask tabulated on the input grid from impulse responses.
#[derive(Clone, Debug)]
pub struct IdentifiedMask<S> {
    pub grid: Arc<QuadratureGrid<S>>,
    pub output: Arc<GroupGrid>,
    /// `w_{cc'}(yᵢ) = F(u_{yᵢ,c'})(e)_c`, shape `out × in × N`.
    pub table: Array3<f64>,
    /// `F(u_{yᵢ,c'})(g_j)_c`, shape `out × in × J × N`, when swept.
    pub sweep: Option<Array4<f64>>,
    /// `max |F(2f₁ + 3f₂) − 2F(f₁) − 3F(f₂)|`.
    pub linearity_residual: f64,
    /// `max |F(L★^g f)(g_j) − F(f)(g⁻¹g_j)|` over probes.
    pub equivariance_residual: f64,
}

fn random_signal<S: Site>(grid: &Arc<QuadratureGrid<S>>, channels: usize, rng: &mut ChaCha8Rng) -> Result<SampledFunction<S>> {
    let v = Array2::from_shape_fn((channels, grid.len()), |_| rng.random_range(-1.0..1.0));
    SampledFunction::new(grid.clone(), v)
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn checked(values: Array2<f64>) -> Result<Array2<f64>> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(values)
    } else {
        Err(Error::NonFinite("system response".into()))
    }
}

/// Tabulates the mask of `system` on its input grid from impulse responses
/// at the identity, `w(yᵢ) = F(u_{yᵢ})(e)`, and measures how linear and how
/// equivariant the system actually is.
pub fn identify_mask<S: Site>(system: &dyn LinearSystem<S>, opts: &IdentifyOptions) -> Result<IdentifiedMask<S>> {
    let grid = system.input_grid().clone();
    let output = system.output_grid().clone();
    let (cin, cout, n) = (system.channels_in(), system.channels_out(), grid.len());
    let identity = GroupElement::identity(grid.nodes()[0].acting_group());
    let probe_at = [identity];
    let mut table = Array3::zeros((cout, cin, n));
    let mut sweep = opts.full_sweep.then(|| Array4::zeros((cout, cin, output.len(), n)));
    for c in 0..cin {
        for i in 0..n {
            let mut v = Array2::zeros((cin, n));
            v[[c, i]] = 1.0 / grid.weights()[i];
            let u = SampledFunction::new(grid.clone(), v)?;
            let at_e = checked(system.apply_at(&u, &probe_at)?)?;
            for o in 0..cout {
                table[[o, c, i]] = at_e[[o, 0]];
            }
            if let Some(s) = sweep.as_mut() {
                let all = checked(system.apply(&u)?)?;
                for o in 0..cout {
                    for j in 0..output.len() {
                        s[[o, c, j, i]] = all[[o, j]];
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut linearity_residual = 0.0f64;
    let mut equivariance_residual = 0.0f64;
    for _ in 0..opts.trials {
        let f1 = random_signal(&grid, cin, &mut rng)?;
        let f2 = random_signal(&grid, cin, &mut rng)?;
        let mix = f1.linear_combination(2.0, &f2, 3.0)?;
        let lhs = checked(system.apply(&mix)?)?;
        let rhs = checked(system.apply(&f1)?)? * 2.0 + checked(system.apply(&f2)?)? * 3.0;
        linearity_residual = linearity_residual.max(max_abs(&(lhs - rhs)));
        for g in &opts.probes {
            let inv = g.inverse()?;
            let perm = grid_permutation(&grid, &inv)?.ok_or_else(|| {
                Error::ProbeFailure(format!("probe {:?} does not permute the input grid", g.to_coords()))
            })?;
            let moved = f1.permuted(&perm)?;
            let lhs = checked(system.apply(&moved)?)?;
            let shifted = output.nodes().iter().map(|gj| inv.compose(gj)).collect::<Result<Vec<_>>>()?;
            let rhs = checked(system.apply_at(&f1, &shifted)?)?;
            equivariance_residual = equivariance_residual.max(max_abs(&(lhs - rhs)));
        }
    }
    Ok(IdentifiedMask { grid, output, table, sweep, linearity_residual, equivariance_residual })
}

/// Applies an identified mask to `f`:
/// `F(f)(g_j) = Σᵢ wᵢ f(xᵢ) w(g_j⁻¹.xᵢ)`.
///
/// Uses the full sweep when present. Otherwise every output element must
/// permute the grid, so that `g_j⁻¹.xᵢ` is again a node where the table is known.
pub fn apply_identified<S: Site>(mask: &IdentifiedMask<S>, f: &SampledFunction<S>) -> Result<Array2<f64>> {
    let (cout, cin, n) = mask.table.dim();
    if f.channels() != cin || f.grid().len() != n {
        return Err(Error::ShapeMismatch("signal does not match the identified mask".into()));
    }
    if !Arc::ptr_eq(f.grid(), &mask.grid) && !f.grid().same_as(&mask.grid) {
        return Err(Error::GridMismatch);
    }
    let w = mask.grid.weights();
    let fw = Array2::from_shape_fn((cin, n), |(c, i)| f.values()[[c, i]] * w[i]);
    let j_count = mask.output.len();
    let mut out = Array2::zeros((cout, j_count));
    if let Some(s) = &mask.sweep {
        for o in 0..cout {
            for j in 0..j_count {
                let mut acc = 0.0;
                for c in 0..cin {
                    for i in 0..n {
                        acc += fw[[c, i]] * s[[o, c, j, i]];
                    }
                }
                out[[o, j]] = acc;
            }
        }
        return Ok(out);
    }
    for (j, g) in mask.output.nodes().iter().enumerate() {
        let perm = grid_permutation(&mask.grid, &g.inverse()?)?.ok_or_else(|| {
            Error::ProbeFailure("output element does not permute the grid; identify with a full sweep".into())
        })?;
        for o in 0..cout {
            let mut acc = 0.0;
            for c in 0..cin {
                for i in 0..n {
                    acc += fw[[c, i]] * mask.table[[o, c, perm[i]]];
                }
            }
            out[[o, j]] = acc;
        }
    }
    Ok(out)
}
