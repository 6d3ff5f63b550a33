//! Synthetic diffusion-like volumes: a voxel lattice whose voxels carry
//! functions on `S²×R⁺`, with cubic regions whose spatial arrangement, not
//! their voxel contents, encodes the class.
//!
//! Inside a region a voxel at local position `(i, j, k)` carries
//! `(1 + a·P₂(⟨u, d⟩)) · exp(−(r/s)²/2)` with orientation
//! `d = R·R_z(π t/n)·e_x` and scale `s = 2^{t/(n−1) − 1/2}`, where `t = i` for
//! class 0 and `t = j` for class 1. `R` is a random rotation shared by the
//! `k`-th sample of each class, so paired samples hold the same multiset of
//! voxel signals.

use std::sync::Arc;

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::linalg::rot_z;
use crate::geometry::space::random_rotation;
use crate::geometry::{build_grid, GridSpec, ManifoldGrid, ManifoldPoint, RadialSpec};
use crate::network::Dataset;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSpec {
    #[serde(default = "VolumeSpec::default_n")]
    pub n_per_class: usize,
    #[serde(default = "VolumeSpec::default_lattice")]
    pub lattice: [usize; 3],
    #[serde(default = "VolumeSpec::default_roi_size")]
    pub roi_size: usize,
    #[serde(default = "VolumeSpec::default_grid")]
    pub grid: GridSpec,
    /// Amplitude of the orientation-dependent term.
    #[serde(default = "VolumeSpec::default_anisotropy")]
    pub anisotropy: f64,
    /// Standard deviation of additive per-node noise on every voxel.
    #[serde(default)]
    pub noise: f64,
    /// Regions whose arrangement depends on the class; the rest use the
    /// class-0 arrangement for both classes.
    #[serde(default = "VolumeSpec::default_signal_rois")]
    pub signal_rois: usize,
    #[serde(default)]
    pub seed: u64,
}

pub const ROI_COUNT: usize = 4;

impl VolumeSpec {
    fn default_n() -> usize {
        50
    }

    fn default_lattice() -> [usize; 3] {
        [8, 8, 8]
    }

    fn default_roi_size() -> usize {
        4
    }

    fn default_grid() -> GridSpec {
        GridSpec::Product { order: 3, radial: RadialSpec { nodes: 6, log_min: -1.5, log_max: 1.5 } }
    }

    fn default_anisotropy() -> f64 {
        0.8
    }

    fn default_signal_rois() -> usize {
        ROI_COUNT
    }

    pub fn with_seed(seed: u64) -> Self {
        VolumeSpec {
            n_per_class: Self::default_n(),
            lattice: Self::default_lattice(),
            roi_size: Self::default_roi_size(),
            grid: Self::default_grid(),
            anisotropy: Self::default_anisotropy(),
            noise: 0.0,
            signal_rois: Self::default_signal_rois(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.roi_size < 2 {
            return Err(Error::InvalidArgument("need samples and regions of side at least 2".into()));
        }
        if self.lattice.iter().any(|&d| d < 2 * self.roi_size) {
            return Err(Error::InvalidArgument(format!(
                "lattice {:?} cannot hold disjoint regions of side {}",
                self.lattice, self.roi_size
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.anisotropy.is_finite() {
            return Err(Error::InvalidArgument("noise must be a non-negative number".into()));
        }
        if self.signal_rois > ROI_COUNT {
            return Err(Error::InvalidArgument(format!("at most {ROI_COUNT} signal regions")));
        }
        if !matches!(self.grid, GridSpec::Product { .. }) {
            return Err(Error::InvalidArgument("voxel grid must live on S²×R⁺".into()));
        }
        Ok(())
    }

    /// Lower corners of the four regions, in opposite octant corners.
    pub fn roi_origins(&self) -> [[usize; 3]; ROI_COUNT] {
        let [a, b, c] = self.lattice.map(|d| d - self.roi_size);
        [[0, 0, 0], [a, b, 0], [a, 0, c], [0, b, c]]
    }
}

#[derive(Clone, Debug)]
pub struct VolumeDataset {
    pub spec: VolumeSpec,
    pub grid: Arc<ManifoldGrid>,
    /// `samples × voxels × grid points`, voxels x-major.
    pub signals: Array3<f64>,
    pub labels: Vec<usize>,
}

fn p2(c: f64) -> f64 {
    1.5 * c * c - 0.5
}

/// Region membership per lattice voxel.
pub fn roi_labels(spec: &VolumeSpec) -> Vec<Option<usize>> {
    let [nx, ny, nz] = spec.lattice;
    let mut out = vec![None; nx * ny * nz];
    for (r, o) in spec.roi_origins().iter().enumerate() {
        for i in 0..spec.roi_size {
            for j in 0..spec.roi_size {
                for k in 0..spec.roi_size {
                    out[((o[0] + i) * ny + o[1] + j) * nz + o[2] + k] = Some(r);
                }
            }
        }
    }
    out
}

impl VolumeDataset {
    pub fn voxels(&self) -> usize {
        self.spec.lattice.iter().product()
    }

    /// Lattice indices of region `roi`, x-major in local coordinates.
    pub fn roi_voxels(&self, roi: usize) -> Vec<usize> {
        let [_, ny, nz] = self.spec.lattice;
        let o = self.spec.roi_origins()[roi];
        let n = self.spec.roi_size;
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(((o[0] + i) * ny + o[1] + j) * nz + o[2] + k);
                }
            }
        }
        out
    }
}

pub fn make_synthetic_volumes(spec: &VolumeSpec) -> Result<VolumeDataset> {
    spec.validate()?;
    let grid = Arc::new(build_grid(&spec.grid)?);
    let points: Vec<(Vector3<f64>, f64)> = grid
        .nodes()
        .iter()
        .map(|p| match p {
            ManifoldPoint::Product(u, r) => (*u, *r),
            _ => unreachable!("validated product grid"),
        })
        .collect();
    let voxels: usize = spec.lattice.iter().product();
    let total = 2 * spec.n_per_class;
    let mut signals = Array3::zeros((total, voxels, grid.len()));
    let mut labels = Vec::with_capacity(total);
    let rois = roi_labels(spec);
    let [_, ny, nz] = spec.lattice;
    let origins = spec.roi_origins();
    let n = spec.roi_size;
    let (rot_seed, noise_seed) = (derive_seed(spec.seed, "volume-rotation"), derive_seed(spec.seed, "volume-noise"));
    for s in 0..total {
        let class = s / spec.n_per_class;
        labels.push(class);
        let mut rot_rng = ChaCha8Rng::seed_from_u64(rot_seed);
        rot_rng.set_stream((s % spec.n_per_class) as u64);
        let global = random_rotation(&mut rot_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        rng.set_stream(s as u64);
        for v in 0..voxels {
            let mut row = signals.slice_mut(ndarray::s![s, v, ..]);
            match rois[v] {
                Some(r) => {
                    let (x, y) = (v / (ny * nz), (v / nz) % ny);
                    let (i, j) = (x - origins[r][0], y - origins[r][1]);
                    let t = if class == 1 && r < spec.signal_rois { j } else { i };
                    let tf = t as f64 / (n - 1) as f64;
                    let d = global * rot_z(std::f64::consts::PI * t as f64 / n as f64) * Vector3::x();
                    let scale = (tf - 0.5).exp2();
                    for (val, (u, q)) in row.iter_mut().zip(&points) {
                        let rr = q / scale;
                        *val = (1.0 + spec.anisotropy * p2(u.dot(&d))) * (-0.5 * rr * rr).exp();
                    }
                }
                None => {
                    let amp: f64 = rng.random_range(0.5..1.5);
                    for (val, (_, q)) in row.iter_mut().zip(&points) {
                        *val = amp * (-0.5 * q * q).exp();
                    }
                }
            }
            if spec.noise > 0.0 {
                row.iter_mut().for_each(|val| {
                    let z: f64 = rng.sample(StandardNormal);
                    *val += spec.noise * z;
                });
            }
        }
    }
    Ok(VolumeDataset { spec: spec.clone(), grid, signals, labels })
}

impl Dataset for VolumeDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn classes(&self) -> usize {
        2
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    /// One `(batch · region voxels) × 1 × points` array per region.
    fn inputs(&self, indices: &[usize]) -> Result<Vec<Array3<f64>>> {
        let n = self.grid.len();
        (0..ROI_COUNT)
            .map(|r| {
                let vox = self.roi_voxels(r);
                let mut out = Array2::zeros((indices.len() * vox.len(), n));
                for (b, &s) in indices.iter().enumerate() {
                    if s >= self.len() {
                        return Err(Error::IndexOutOfRange { index: s, limit: self.len() });
                    }
                    for (k, &v) in vox.iter().enumerate() {
                        out.row_mut(b * vox.len() + k).assign(&self.signals.slice(ndarray::s![s, v, ..]));
                    }
                }
                Ok(out.into_shape_with_order((indices.len() * vox.len(), 1, n)).expect("sized"))
            })
            .collect()
    }
}
