use std::sync::Arc;

use hcnn::datagen::{eap_matrix, make_p3_dataset, make_synthetic_volumes, VolumeDataset};
use hcnn::geometry::build_grid;
use ndarray::Array3;
use serde_json::json;

use super::Context;
use crate::config::DataSpec;
use crate::error::{CliError, CliResult};
use crate::store::{load_dataset, save_p3, save_volumes, LoadedData, SignalMode};
use crate::{CommonArgs, Outcome};

/// Name of the generated dataset artifact.
pub const DATASET: &str = "dataset";

pub fn gen_data(args: &CommonArgs) -> CliResult<Outcome> {
    let ctx = Context::new(args, "gen-data")?;
    let name = DATASET;
    let data = ctx
        .cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("gen-data needs a [data] section".into()))?;
    ctx.guard(&[&format!("{name}.json")])?;
    let (files, samples, points, warnings) = match &data {
        DataSpec::P3(spec) => {
            let d = make_p3_dataset(spec)?;
            let files = save_p3(&ctx.out, name, &d, spec)?;
            (files, d.labels.len(), d.grid.len(), d.warnings)
        }
        DataSpec::Volumes(spec) => {
            let d = make_synthetic_volumes(spec)?;
            let files = save_volumes(&ctx.out, name, &d, &spec.grid, SignalMode::Signal, None)?;
            (files, d.labels.len(), d.grid.len(), Vec::new())
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let summary = format!("{samples} samples on {points} grid points in {}", ctx.path(&format!("{name}.json")).display());
    ctx.finish(&files, json!({ "samples": samples, "grid_points": points, "warnings": warnings }), summary)
}

pub fn eap(args: &CommonArgs) -> CliResult<Outcome> {
    let ctx = Context::new(args, "eap")?;
    let section = ctx.cfg.eap.clone().ok_or_else(|| CliError::Usage("eap needs an [eap] section".into()))?;
    ctx.guard(&[&format!("{}.json", section.output)])?;
    let source = load_dataset(&ctx.out, &section.source)?;
    let LoadedData::Volumes(vol) = &source.data else {
        return Err(CliError::Usage(format!("{} is not a volume dataset", section.source)));
    };
    if source.mode != SignalMode::Signal {
        return Err(CliError::Usage(format!("{} already holds propagators", section.source)));
    }
    let r_grid = Arc::new(build_grid(&section.r_grid)?);
    let c = eap_matrix(&vol.grid, &r_grid)?;
    let (n, v, q) = vol.signals.dim();
    let flat = vol.signals.view().into_shape_with_order((n * v, q)).expect("standard layout");
    let p = flat.dot(&c.t());
    let signals = Array3::from_shape_vec((n, v, r_grid.len()), p.into_iter().collect()).expect("sized");
    let out = VolumeDataset { spec: vol.spec.clone(), grid: r_grid.clone(), signals, labels: vol.labels.clone() };
    let files = save_volumes(&ctx.out, &section.output, &out, &section.r_grid, SignalMode::Eap, Some(&source.hash))?;
    let summary = format!("{n} propagator volumes on {} displacement points from {}", r_grid.len(), section.source);
    ctx.finish(&files, json!({ "samples": n, "source_hash": source.hash, "mode": SignalMode::Eap }), summary)
}
