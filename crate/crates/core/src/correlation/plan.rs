//! Batched correlation against a fixed grid, anchor set and output set.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::geometry::{GroupElement, QuadratureGrid, Site};
use crate::signal::BumpRows;

use std::sync::Arc;

/// Bump response rows for fixed `(grid, anchors, τ, output elements)`, so a
/// correlation layer reduces to two matrix products per batch.
#[derive(Clone, Debug)]
pub struct CorrPlan {
    /// `(J·K) × N`, row `j·K + k`.
    rows: Array2<f64>,
    outputs: usize,
    anchors: usize,
}

/// Intermediate of [`CorrPlan::forward`] kept for the backward pass:
/// `P` laid out as `(batch·J) × (channels_in·K)`.
#[derive(Clone, Debug)]
pub struct PlanCache {
    p: Array2<f64>,
    batch: usize,
    channels_in: usize,
}

impl CorrPlan {
    pub fn new<S: Site>(
        grid: Arc<QuadratureGrid<S>>,
        anchors: &[S],
        tau: f64,
        elements: &[GroupElement],
    ) -> Result<Self> {
        let rows = BumpRows::new(grid, tau).matrix(anchors, elements)?;
        Ok(CorrPlan { rows, outputs: elements.len(), anchors: anchors.len() })
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn anchors(&self) -> usize {
        self.anchors
    }

    pub fn inputs(&self) -> usize {
        self.rows.ncols()
    }

    /// `x`: `batch × channels_in × N`; `coef`: `channels_out × channels_in × K`.
    /// Returns `batch × channels_out × J`.
    pub fn forward(&self, x: &Array3<f64>, coef: &Array3<f64>) -> Result<(Array3<f64>, PlanCache)> {
        let (b, cin, n) = x.dim();
        let (cout, ccin, k) = coef.dim();
        if n != self.inputs() || ccin != cin || k != self.anchors {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} and coefficients {:?} against a plan over {} points and {} anchors",
                x.dim(),
                coef.dim(),
                self.inputs(),
                self.anchors
            )));
        }
        let j = self.outputs;
        let x = x.as_standard_layout();
        let x2 = x.view().into_shape_with_order((b * cin, n)).expect("standard layout");
        let p = x2.dot(&self.rows.t()); // (b·cin) × (J·K)
        let p = p
            .into_shape_with_order((b, cin, j, k))
            .expect("sized")
            .permuted_axes([0, 2, 1, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * j, cin * k))
            .expect("sized");
        let c2 = coef.view().into_shape_with_order((cout, cin * k)).expect("standard layout");
        let y = p.dot(&c2.t()); // (b·J) × cout
        let y = y
            .into_shape_with_order((b, j, cout))
            .expect("sized")
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .into_owned();
        Ok((y, PlanCache { p, batch: b, channels_in: cin }))
    }

    /// Given `dy` (`batch × channels_out × J`), returns the coefficient
    /// gradient and, when asked, the input gradient.
    pub fn backward(
        &self,
        cache: &PlanCache,
        coef: &Array3<f64>,
        dy: &Array3<f64>,
        want_input: bool,
    ) -> (Array3<f64>, Option<Array3<f64>>) {
        let (cout, cin, k) = coef.dim();
        let (b, j) = (cache.batch, self.outputs);
        debug_assert_eq!(cin, cache.channels_in);
        let dy2 = dy
            .view()
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * j, cout))
            .expect("sized");
        let dcoef = dy2
            .t()
            .dot(&cache.p)
            .into_shape_with_order((cout, cin, k))
            .expect("sized");
        if !want_input {
            return (dcoef, None);
        }
        let c2 = coef.view().into_shape_with_order((cout, cin * k)).expect("standard layout");
        let dp = dy2
            .dot(&c2)
            .into_shape_with_order((b, j, cin, k))
            .expect("sized")
            .permuted_axes([0, 2, 1, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * cin, j * k))
            .expect("sized");
        let dx = dp
            .dot(&self.rows)
            .into_shape_with_order((b, cin, self.inputs()))
            .expect("sized");
        (dcoef, Some(dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::correlate;
    use crate::geometry::{build_grid, haar_grid, GridSpec, ScaleSpec, SpaceKind};
    use crate::signal::{manifold_anchors, BumpMask, SampledFunction};
    use crate::geometry::RadialSpec;
    use ndarray::{Array, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plan_matches_direct_correlation_and_its_adjoint() {
        let grid = Arc::new(build_grid(&GridSpec::Product { order: 3, radial: RadialSpec::new(6) }).unwrap());
        let out = haar_grid(&GridSpec::So3xScale { n_alpha: 3, n_beta: 2, n_gamma: 3, scale: ScaleSpec::powers_of_two(0, 1) }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = BumpMask::xavier(manifold_anchors(SpaceKind::ProductS2RPlus, 4, 0.3, &mut rng), 0.6, 3, 2, &mut rng).unwrap();
        let x = Array::from_shape_fn((2, 2, grid.len()), |_| rng.random_range(-1.0..1.0));
        let plan = CorrPlan::new(grid.clone(), w.anchors(), w.tau(), out.nodes()).unwrap();
        let (y, cache) = plan.forward(&x, w.coefficients()).unwrap();
        for b in 0..2 {
            let f = SampledFunction::new(grid.clone(), x.index_axis(Axis(0), b).to_owned()).unwrap();
            let direct = correlate(&f, &w, out.nodes()).unwrap();
            let d = &y.index_axis(Axis(0), b) - &direct;
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
        // ⟨dy, A x⟩ = ⟨Aᵀ dy, x⟩ and ⟨dy, y⟩ = ⟨dcoef, coef⟩ by linearity.
        let dy = Array::from_shape_fn(y.dim(), |_| rng.random_range(-1.0..1.0));
        let (dcoef, dx) = plan.backward(&cache, w.coefficients(), &dy, true);
        let lhs = (&dy * &y).sum();
        assert!((lhs - (&dx.unwrap() * &x).sum()).abs() < 1e-10);
        assert!((lhs - (&dcoef * w.coefficients()).sum()).abs() < 1e-10);
    }
}
