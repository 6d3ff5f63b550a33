//! Datasets and checkpoints as artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use hcnn::datagen::{P3Dataset, P3Spec, VolumeDataset, VolumeSpec};
use hcnn::geometry::{build_grid, GridSpec, ManifoldGrid};
use hcnn::network::{Dataset, Network, NetworkSpec};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::format::{write_artifact, Artifact, Blob};

pub const DATASET_KIND: &str = "dataset";
pub const CHECKPOINT_KIND: &str = "checkpoint";

/// Whether samples hold the diffusion signal or its propagator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalMode {
    #[serde(rename = "signal")]
    Signal,
    #[serde(rename = "EAP")]
    Eap,
}

#[derive(Clone, Debug)]
pub enum LoadedData {
    P3(P3Dataset),
    Volumes(VolumeDataset),
}

impl LoadedData {
    pub fn as_dataset(&self) -> &dyn Dataset {
        match self {
            LoadedData::P3(d) => d,
            LoadedData::Volumes(d) => d,
        }
    }

    pub fn grid(&self) -> &Arc<ManifoldGrid> {
        match self {
            LoadedData::P3(d) => &d.grid,
            LoadedData::Volumes(d) => &d.grid,
        }
    }
}

/// A dataset as stored, with the hash of its manifest.
#[derive(Clone, Debug)]
pub struct StoredData {
    pub data: LoadedData,
    pub mode: SignalMode,
    pub grid_spec: GridSpec,
    pub hash: String,
}

fn grid_blobs(grid: &ManifoldGrid) -> [(&'static str, Blob); 2] {
    let coords: Vec<Vec<f64>> = grid.nodes().iter().map(|p| p.coords()).collect();
    let width = coords.first().map_or(0, Vec::len);
    [
        ("grid_points", Blob::f64(&[grid.len(), width], coords.concat())),
        ("grid_weights", Blob::f64(&[grid.len()], grid.weights().to_vec())),
    ]
}

fn labels_blob(labels: &[usize]) -> Blob {
    Blob::i64(&[labels.len()], labels.iter().map(|&l| l as i64).collect())
}

/// Rebuilds the grid from its spec and insists the stored nodes agree bit for bit.
fn load_grid(a: &Artifact, spec: &GridSpec) -> CliResult<Arc<ManifoldGrid>> {
    let grid = build_grid(spec)?;
    let (_, points) = a.f64("grid_points")?;
    let (_, weights) = a.f64("grid_weights")?;
    let rebuilt: Vec<f64> = grid.nodes().iter().flat_map(|p| p.coords()).collect();
    let same = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same(&rebuilt, &points) || !same(grid.weights(), &weights) {
        return Err(CliError::Io(format!("{}: stored grid differs from its spec", a.name)));
    }
    Ok(Arc::new(grid))
}

fn load_labels(a: &Artifact, n: usize) -> CliResult<Vec<usize>> {
    let (_, raw) = a.i64("labels")?;
    if raw.len() != n || raw.iter().any(|&l| !(0..2).contains(&l)) {
        return Err(CliError::Io(format!("{}: labels do not match the samples", a.name)));
    }
    Ok(raw.into_iter().map(|l| l as usize).collect())
}

pub fn save_p3(dir: &Path, name: &str, d: &P3Dataset, spec: &P3Spec) -> CliResult<Vec<PathBuf>> {
    let (n, m) = d.values.dim();
    let [gp, gw] = grid_blobs(&d.grid);
    let meta = json!({
        "source": "p3",
        "mode": SignalMode::Signal,
        "samples": n,
        "grid": spec.grid,
        "spec": spec,
        "warnings": d.warnings,
    });
    let values = Blob::f64(&[n, m], d.values.iter().copied().collect());
    write_artifact(dir, name, DATASET_KIND, meta, &[gp, gw, ("values", values), ("labels", labels_blob(&d.labels))])
}

/// Writes a volume dataset; `source_hash` names the artifact it was derived from.
pub fn save_volumes(
    dir: &Path,
    name: &str,
    d: &VolumeDataset,
    grid_spec: &GridSpec,
    mode: SignalMode,
    source_hash: Option<&str>,
) -> CliResult<Vec<PathBuf>> {
    let (n, v, m) = d.signals.dim();
    let [gp, gw] = grid_blobs(&d.grid);
    let meta = json!({
        "source": "volumes",
        "mode": mode,
        "samples": n,
        "grid": grid_spec,
        "spec": d.spec,
        "source_hash": source_hash,
    });
    let signals = Blob::f64(&[n, v, m], d.signals.iter().copied().collect());
    write_artifact(dir, name, DATASET_KIND, meta, &[gp, gw, ("signals", signals), ("labels", labels_blob(&d.labels))])
}

pub fn load_dataset(dir: &Path, name: &str) -> CliResult<StoredData> {
    let a = Artifact::open(dir, name, DATASET_KIND)?;
    let source: String = a.meta("source")?;
    let mode: SignalMode = a.meta("mode")?;
    let grid_spec: GridSpec = a.meta("grid")?;
    let grid = load_grid(&a, &grid_spec)?;
    let data = match source.as_str() {
        "p3" => {
            let (shape, values) = a.f64("values")?;
            if shape.len() != 2 || shape[1] != grid.len() {
                return Err(CliError::Io(format!("{name}: values of shape {shape:?} do not fit the grid")));
            }
            let values = Array2::from_shape_vec((shape[0], shape[1]), values).expect("checked length");
            let labels = load_labels(&a, shape[0])?;
            let warnings = a.meta("warnings")?;
            LoadedData::P3(P3Dataset { grid, values, labels, warnings })
        }
        "volumes" => {
            let spec: VolumeSpec = a.meta("spec")?;
            let (shape, signals) = a.f64("signals")?;
            let voxels: usize = spec.lattice.iter().product();
            if shape.len() != 3 || shape[1] != voxels || shape[2] != grid.len() {
                return Err(CliError::Io(format!("{name}: signals of shape {shape:?} do not fit the lattice and grid")));
            }
            let signals = Array3::from_shape_vec((shape[0], shape[1], shape[2]), signals).expect("checked length");
            let labels = load_labels(&a, shape[0])?;
            LoadedData::Volumes(VolumeDataset { spec, grid, signals, labels })
        }
        other => return Err(CliError::Io(format!("{name}: unknown data source {other}"))),
    };
    Ok(StoredData { data, mode, grid_spec, hash: a.hash })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkSpec,
    pub dataset: String,
    pub dataset_hash: String,
    /// Cross-validation fold the model was trained on, if any.
    pub fold: Option<usize>,
    pub train_acc: f64,
    pub eval_acc: f64,
}

pub fn save_checkpoint(dir: &Path, net: &mut Network, meta: &CheckpointMeta, eval_idx: &[usize]) -> CliResult<Vec<PathBuf>> {
    let params = net.params();
    let state = net.state();
    let idx: Vec<i64> = eval_idx.iter().map(|&i| i as i64).collect();
    write_artifact(
        dir,
        "checkpoint",
        CHECKPOINT_KIND,
        serde_json::to_value(meta).expect("serializable"),
        &[
            ("params", Blob::f64(&[params.len()], params)),
            ("state", Blob::f64(&[state.len()], state)),
            ("eval_indices", Blob::i64(&[idx.len()], idx)),
        ],
    )
}

pub fn load_checkpoint(dir: &Path) -> CliResult<(Network, CheckpointMeta, Vec<usize>)> {
    let a = Artifact::open(dir, "checkpoint", CHECKPOINT_KIND)?;
    let meta: CheckpointMeta = serde_json::from_value(a.manifest.meta.clone())
        .map_err(|e| CliError::Io(format!("checkpoint metadata: {e}")))?;
    let mut net = Network::build(&meta.network)?;
    net.set_params(&a.f64("params")?.1).map_err(|e| CliError::Io(e.to_string()))?;
    net.set_state(&a.f64("state")?.1).map_err(|e| CliError::Io(e.to_string()))?;
    let (_, idx) = a.i64("eval_indices")?;
    if idx.iter().any(|&i| i < 0) {
        return Err(CliError::Io("checkpoint: negative evaluation index".into()));
    }
    Ok((net, meta, idx.into_iter().map(|i| i as usize).collect()))
}
