use std::fmt::Write as _;

use hcnn::network::{Dataset, Network};
use hcnn::stats::{permutation_test, FeatureTable};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{write_text, Context};
use crate::error::{CliError, CliResult};
use crate::store::{load_checkpoint, load_dataset, LoadedData};
use crate::verify::{report_tsv, run_suite};
use crate::{CommonArgs, Outcome};

pub fn verify(args: &CommonArgs, break_equivariance: bool) -> CliResult<Outcome> {
    let ctx = Context::new(args, "verify")?;
    ctx.guard(&["verify.tsv"])?;
    let settings = ctx.cfg.verify.clone().unwrap_or_default();
    let checks = run_suite(&settings, ctx.cfg.component_seed("verify"), break_equivariance);
    let files = vec![write_text(&ctx.path("verify.tsv"), &report_tsv(&checks))?];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let metrics = json!({ "checks": checks, "failed": failed, "break_equivariance": break_equivariance });
    let mut summary = String::new();
    for c in &checks {
        let _ = writeln!(summary, "{:<32} {:>12.3e}  {}", c.name, c.measured, if c.passed { "pass" } else { "FAIL" });
    }
    let outcome = ctx.finish(&files, metrics, summary.trim_end().to_string())?;
    if failed.is_empty() {
        Ok(outcome)
    } else {
        eprintln!("{}", outcome.summary);
        Err(CliError::Check(format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))))
    }
}

/// Per-subject features of one region: the group-averaged output of the
/// last correlation layer, averaged over voxels, and the output of the last
/// convolution, flattened. The second is absent without convolutions.
fn region_features(net: &mut Network, data: &dyn Dataset, roi: usize, batch: usize) -> CliResult<(Array2<f64>, Option<Array2<f64>>)> {
    let layers = &net.branches()[roi];
    let intra_depth = layers
        .iter()
        .position(|l| l.name() == "mean")
        .map(|i| i + 1)
        .ok_or_else(|| CliError::Usage("network has no grid-mean layer to tap".into()))?;
    let inter_depth = layers.iter().rposition(|l| l.name() == "conv3d").map(|i| i + 1);
    let n = data.len();
    let mut intra = Vec::with_capacity(n);
    let mut inter = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch.max(1)) {
        let x = data.inputs(chunk)?.swap_remove(roi);
        let y = net.forward_branch_prefix(roi, intra_depth, &x, false)?;
        let (bv, c, _) = y.dim();
        let voxels = bv / chunk.len();
        let per = y.into_shape_with_order((chunk.len(), voxels, c)).expect("voxel-major rows");
        intra.push(per.mean_axis(Axis(1)).expect("non-empty"));
        if let Some(d) = inter_depth {
            let z = net.forward_branch_prefix(roi, d, &x, false)?;
            let (b, c, m) = z.dim();
            inter.push(z.into_shape_with_order((b, c * m)).expect("standard layout"));
        }
    }
    let stack = |parts: &[Array2<f64>]| ndarray::concatenate(Axis(0), &parts.iter().map(|p| p.view()).collect::<Vec<_>>());
    let intra = stack(&intra).map_err(|e| CliError::Usage(e.to_string()))?;
    let inter = if inter.is_empty() { None } else { Some(stack(&inter).map_err(|e| CliError::Usage(e.to_string()))?) };
    Ok((intra, inter))
}

pub fn permtest(args: &CommonArgs) -> CliResult<Outcome> {
    let ctx = Context::new(args, "permtest")?;
    let section = ctx.cfg.permtest.clone().unwrap_or_default();
    ctx.guard(&["permtest.tsv"])?;
    let (mut net, meta, _) = load_checkpoint(&ctx.out)?;
    let stored = load_dataset(&ctx.out, &meta.dataset)?;
    if stored.hash != meta.dataset_hash {
        return Err(CliError::Usage(format!("{} changed since the checkpoint was trained", meta.dataset)));
    }
    let LoadedData::Volumes(vol) = &stored.data else {
        return Err(CliError::Usage("permtest needs a volume dataset".into()));
    };
    let seed = ctx.cfg.component_seed("permtest");
    let mut labels = vol.labels.clone();
    if section.shuffle_labels {
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(hcnn::seed::derive_seed(seed, "shuffle")));
    }
    let batch = ctx.cfg.train.as_ref().map_or(32, |t| t.batch_size);
    let ids: Vec<u64> = (0..labels.len() as u64).collect();
    let mut table = String::from("stage\troi\tt2\tp_value\tn_perm\tsignificant\n");
    let mut rows = Vec::new();
    for roi in 0..net.branches().len() {
        let (intra, inter) = region_features(&mut net, vol, roi, batch)?;
        for (stage, feats) in [("intra", Some(intra)), ("inter", inter)] {
            let Some(feats) = feats else { continue };
            let t = FeatureTable::new(ids.clone(), feats, labels.clone())?;
            let r = permutation_test(&t, section.n_perm, hcnn::seed::derive_seed(seed, &format!("{stage}-{roi}")))?;
            let _ = writeln!(table, "{stage}\t{roi}\t{}\t{}\t{}\t{}", r.t2, r.p_value, r.n_perm, r.significant);
            eprintln!("{stage} roi {roi}: t² {:.3}  p {:.5}", r.t2, r.p_value);
            rows.push(json!({ "stage": stage, "roi": roi, "t2": r.t2, "p_value": r.p_value, "n_perm": r.n_perm }));
        }
    }
    let files = vec![write_text(&ctx.path("permtest.tsv"), &table)?];
    let summary = table.trim_end().to_string();
    ctx.finish(&files, json!({ "tests": rows, "n_perm": section.n_perm, "shuffled": section.shuffle_labels }), summary)
}
