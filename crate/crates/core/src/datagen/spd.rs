//! Gaussian-like classes on SPD(3) tabulated as densities on a shared grid.

use std::sync::Arc;

use nalgebra::Matrix3;
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::linalg::{is_spd, spd_distance, spd_sqrt, sym_exp};
use crate::geometry::space::random_symmetric;
use crate::geometry::{build_grid, GridSpec, ManifoldGrid, ManifoldPoint};
use crate::network::Dataset;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct SpdGaussianSpec {
    pub location: Matrix3<f64>,
    pub sigma: f64,
    pub count: usize,
    pub seed: u64,
}

/// Tangent-space sampling `X = M^{1/2} exp(σ Z) M^{1/2}`, an approximation
/// of the Riemannian normal law. Sample `i` draws from stream `i`.
pub fn sample_spd_gaussian(spec: &SpdGaussianSpec) -> Result<Vec<Matrix3<f64>>> {
    if !is_spd(&spec.location, 1e-12) {
        return Err(Error::OffManifold("location is not SPD".into()));
    }
    if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", spec.sigma)));
    }
    let root = spd_sqrt(&spec.location);
    Ok((0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let x = root * sym_exp(&(random_symmetric(&mut rng) * spec.sigma)) * root;
            (x + x.transpose()) * 0.5
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct P3Spec {
    /// Row-major class locations.
    #[serde(default = "P3Spec::default_m1")]
    pub m1: [f64; 9],
    #[serde(default = "P3Spec::default_m2")]
    pub m2: [f64; 9],
    #[serde(default = "P3Spec::default_n")]
    pub n_per_class: usize,
    #[serde(default = "P3Spec::default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "P3Spec::default_sigma")]
    pub sigma: f64,
    #[serde(default = "P3Spec::default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub seed: u64,
}

impl P3Spec {
    fn default_m1() -> [f64; 9] {
        [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    }

    fn default_m2() -> [f64; 9] {
        let (a, b) = (2f64.exp(), (-1f64).exp());
        [a, 0.0, 0.0, 0.0, a, 0.0, 0.0, 0.0, b]
    }

    fn default_n() -> usize {
        500
    }

    fn default_perturbation() -> f64 {
        0.2
    }

    fn default_sigma() -> f64 {
        1.0
    }

    fn default_grid() -> GridSpec {
        GridSpec::Spd { count: 128, spread: 1.2, seed: 17 }
    }

    pub fn with_seed(seed: u64) -> Self {
        P3Spec {
            m1: Self::default_m1(),
            m2: Self::default_m2(),
            n_per_class: Self::default_n(),
            perturbation: Self::default_perturbation(),
            sigma: Self::default_sigma(),
            grid: Self::default_grid(),
            seed,
        }
    }

    pub fn locations(&self) -> [Matrix3<f64>; 2] {
        [Matrix3::from_row_slice(&self.m1), Matrix3::from_row_slice(&self.m2)]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("perturbation", self.perturbation), ("sigma", self.sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_per_class == 0 {
            return Err(Error::InvalidArgument("n_per_class must be positive".into()));
        }
        for (name, m) in ["m1", "m2"].iter().zip(self.locations()) {
            if !is_spd(&m, 1e-12) {
                return Err(Error::OffManifold(format!("{name} is not SPD")));
            }
        }
        if !matches!(self.grid, GridSpec::Spd { .. }) {
            return Err(Error::InvalidArgument("grid must be an SPD grid".into()));
        }
        Ok(())
    }
}

/// Max-normalized densities on one shared SPD grid, samples as rows.
#[derive(Clone, Debug)]
pub struct P3Dataset {
    pub grid: Arc<ManifoldGrid>,
    pub values: Array2<f64>,
    pub labels: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Per sample: perturb the class location, then tabulate
/// `exp(−d²(M̃, X) / 2σ²)` on the grid and divide by its maximum.
pub fn make_p3_dataset(spec: &P3Spec) -> Result<P3Dataset> {
    spec.validate()?;
    let grid = Arc::new(build_grid(&spec.grid)?);
    let locs = spec.locations();
    let mut warnings = Vec::new();
    let gap = spd_distance(&locs[0], &locs[1]);
    if gap <= 2.0 * spec.perturbation {
        warnings.push(format!(
            "class locations {gap:.3} apart overlap at perturbation {}",
            spec.perturbation
        ));
    }
    let n = spec.n_per_class;
    let mut values = Array2::zeros((2 * n, grid.len()));
    let mut labels = Vec::with_capacity(2 * n);
    for (class, m) in locs.iter().enumerate() {
        let centres = sample_spd_gaussian(&SpdGaussianSpec {
            location: *m,
            sigma: spec.perturbation,
            count: n,
            seed: derive_seed(spec.seed, &format!("class-{class}")),
        })?;
        for (i, c) in centres.iter().enumerate() {
            let mut row = values.row_mut(class * n + i);
            for (v, x) in row.iter_mut().zip(grid.nodes()) {
                let ManifoldPoint::Spd(x) = x else { unreachable!("validated SPD grid") };
                let d = spd_distance(c, x);
                *v = (-d * d / (2.0 * spec.sigma * spec.sigma)).exp();
            }
            let mx = row.fold(0.0f64, |a, v| a.max(*v));
            if !(mx > 0.0) {
                return Err(Error::NonFinite("density vanished on the whole grid".into()));
            }
            row.mapv_inplace(|v| v / mx);
            labels.push(class);
        }
    }
    Ok(P3Dataset { grid, values, labels, warnings })
}

impl Dataset for P3Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn classes(&self) -> usize {
        2
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn inputs(&self, indices: &[usize]) -> Result<Vec<Array3<f64>>> {
        let rows = self.values.select(Axis(0), indices);
        let (b, n) = rows.dim();
        Ok(vec![rows.into_shape_with_order((b, 1, n)).expect("sized")])
    }
}

/// Nearest class centroid in raw value space, fitted on even-indexed
/// samples of each class and scored on the rest.
pub fn nearest_centroid_accuracy(values: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut fit = vec![Vec::new(); classes];
    let mut test = Vec::new();
    let mut seen = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        if seen[y] % 2 == 0 {
            fit[y].push(i);
        } else {
            test.push(i);
        }
        seen[y] += 1;
    }
    if test.is_empty() || fit.iter().any(|f| f.is_empty()) {
        return Err(Error::InsufficientData("each class needs at least two samples".into()));
    }
    let centroids: Vec<_> = fit
        .iter()
        .map(|idx| values.select(Axis(0), idx).mean_axis(Axis(0)).expect("non-empty"))
        .collect();
    let correct = test
        .iter()
        .filter(|&&i| {
            let row = values.row(i);
            let best = centroids
                .iter()
                .map(|c| (&row - c).mapv(|v| v * v).sum())
                .enumerate()
                .fold((0, f64::INFINITY), |b, (k, d)| if d < b.1 { (k, d) } else { b });
            best.0 == labels[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
