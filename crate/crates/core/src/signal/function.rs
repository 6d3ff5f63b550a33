//! Multi-channel functions sampled on a quadrature grid.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use super::basis::Basis;
use crate::error::{Error, Result};
use crate::geometry::{GroupElement, QuadratureGrid, Site};

/// A closed-form description `f(x) = Σ_α c_α v_α(shift⁻¹.x)` that lets a
/// sampled function be re-evaluated anywhere.
#[derive(Clone, Debug)]
pub struct Band<S> {
    pub basis: Arc<dyn Basis<S>>,
    /// `channels × basis.len()`.
    pub coefficients: Array2<f64>,
    pub shift: Option<GroupElement>,
}

impl<S: Site> Band<S> {
    /// All channels at `x`.
    pub fn eval(&self, x: &S, buf: &mut [f64]) -> Result<Array1<f64>> {
        let y = match &self.shift {
            Some(g) => x.translate(&g.inverse()?)?,
            None => x.clone(),
        };
        self.basis.eval_into(&y, buf)?;
        let v = ndarray::ArrayView1::from(&buf[..self.basis.len()]);
        Ok(self.coefficients.dot(&v))
    }
}

/// `channels × points` values on a shared grid.
#[derive(Clone, Debug)]
pub struct SampledFunction<S> {
    grid: Arc<QuadratureGrid<S>>,
    values: Array2<f64>,
    band: Option<Band<S>>,
}

/// A sampled function whose domain is a group.
pub type GroupFunction = SampledFunction<GroupElement>;

impl<S: Site> SampledFunction<S> {
    pub fn new(grid: Arc<QuadratureGrid<S>>, values: Array2<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values per channel on a {}-point grid",
                values.ncols(),
                grid.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sampled function values".into()));
        }
        Ok(SampledFunction { grid, values, band: None })
    }

    pub fn zeros(grid: Arc<QuadratureGrid<S>>, channels: usize) -> Self {
        let n = grid.len();
        SampledFunction { grid, values: Array2::zeros((channels, n)), band: None }
    }

    /// Samples a band-limited function given by basis coefficients
    /// (`channels × basis.len()`), keeping the closed form for exact resampling.
    pub fn synthesize(
        grid: Arc<QuadratureGrid<S>>,
        basis: Arc<dyn Basis<S>>,
        coefficients: Array2<f64>,
    ) -> Result<Self> {
        if coefficients.ncols() != basis.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for a basis of {}",
                coefficients.ncols(),
                basis.len()
            )));
        }
        let band = Band { basis, coefficients, shift: None };
        let values = sample_band(&grid, &band)?;
        let mut f = SampledFunction::new(grid, values)?;
        f.band = Some(band);
        Ok(f)
    }

    /// `1/wᵢ` at node `i` and zero elsewhere, so `⟨δᵢ, f⟩ = f(xᵢ)`.
    pub fn delta_at(grid: Arc<QuadratureGrid<S>>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::IndexOutOfRange { index, limit: grid.len() });
        }
        let mut values = Array2::zeros((1, grid.len()));
        values[[0, index]] = 1.0 / grid.weights()[index];
        Ok(SampledFunction { grid, values, band: None })
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid<S>> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn band(&self) -> Option<&Band<S>> {
        self.band.as_ref()
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_as(&other.grid)
    }

    /// `⟨f_a, g_b⟩ = Σᵢ wᵢ f_a(xᵢ) g_b(xᵢ)` for every channel pair.
    pub fn inner_product(&self, other: &Self) -> Result<Array2<f64>> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let w = Array1::from(self.grid.weights().to_vec());
        let weighted = &self.values * &w;
        Ok(weighted.dot(&other.values.t()))
    }

    /// `a·self + b·other`; the closed form is dropped.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        if self.channels() != other.channels() {
            return Err(Error::ShapeMismatch("channel counts differ".into()));
        }
        let values = &self.values * a + &other.values * b;
        SampledFunction::new(self.grid.clone(), values)
    }

    /// `(L★^g f)(x) = f(g⁻¹.x)`, resampled through the closed form.
    ///
    /// Functions without one cannot be moved off their grid and fail with
    /// [`Error::UnsupportedResample`].
    pub fn pushforward(&self, g: &GroupElement) -> Result<Self> {
        let band = self.band.as_ref().ok_or(Error::UnsupportedResample)?;
        let shift = match &band.shift {
            Some(h) => g.compose(h)?,
            None => g.clone(),
        };
        let band = Band { shift: Some(shift), ..band.clone() };
        let values = sample_band(&self.grid, &band)?;
        let mut f = SampledFunction::new(self.grid.clone(), values)?;
        f.band = Some(band);
        Ok(f)
    }

    /// Values moved by a node permutation: `out[:, i] = values[:, perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.grid.len() {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let values = Array2::from_shape_fn(self.values.dim(), |(c, i)| self.values[[c, perm[i]]]);
        SampledFunction::new(self.grid.clone(), values)
    }
}

fn sample_band<S: Site>(grid: &QuadratureGrid<S>, band: &Band<S>) -> Result<Array2<f64>> {
    let mut buf = vec![0.0; band.basis.len()];
    let mut values = Array2::zeros((band.coefficients.nrows(), grid.len()));
    for (i, x) in grid.nodes().iter().enumerate() {
        values.column_mut(i).assign(&band.eval(x, &mut buf)?);
    }
    Ok(values)
}

/// `c_{cα} = ⟨f_c, v_α⟩` under the grid quadrature.
pub fn fit_coefficients<S: Site>(f: &SampledFunction<S>, basis: &dyn Basis<S>) -> Result<Array2<f64>> {
    let n = basis.len();
    let mut design = Array2::zeros((f.grid.len(), n));
    let mut buf = vec![0.0; n];
    for (i, (x, w)) in f.grid.nodes().iter().zip(f.grid.weights()).enumerate() {
        basis.eval_into(x, &mut buf)?;
        for (a, v) in buf.iter().enumerate() {
            design[[i, a]] = w * v;
        }
    }
    Ok(f.values.dot(&design))
}

/// Samples `Σ_α c_α v_α` on `grid`.
pub fn synthesize<S: Site>(
    coefficients: Array2<f64>,
    basis: Arc<dyn Basis<S>>,
    grid: Arc<QuadratureGrid<S>>,
) -> Result<SampledFunction<S>> {
    SampledFunction::synthesize(grid, basis, coefficients)
}
