use std::fmt::Write as _;

use hcnn::network::{cross_validate_with, evaluate, fold_assignment, train as fit, Architecture, Network, NetworkSpec};
use serde_json::json;

use super::{write_text, Context};
use crate::error::{CliError, CliResult};
use crate::store::{load_checkpoint, load_dataset, save_checkpoint, CheckpointMeta, LoadedData, StoredData};
use crate::{CommonArgs, Outcome};

const METRICS_HEADER: &str = "fold\tepoch\tlr\ttrain_loss\ttrain_acc\teval_acc\n";

/// The network must read the stored grid and match the data layout.
fn check_compatible(spec: &NetworkSpec, stored: &StoredData) -> CliResult<()> {
    let (grid, fits) = match (&spec.architecture, &stored.data) {
        (Architecture::Spd { input_grid, .. }, LoadedData::P3(_)) => (input_grid, true),
        (Architecture::Dmri { input_grid, rois, roi_dims, .. }, LoadedData::Volumes(v)) => {
            (input_grid, *rois == hcnn::datagen::ROI_COUNT && *roi_dims == [v.spec.roi_size; 3])
        }
        _ => return Err(CliError::Usage("network architecture does not match the dataset source".into())),
    };
    if *grid != stored.grid_spec {
        return Err(CliError::Usage(format!(
            "network input grid {grid:?} does not match the dataset grid {:?}",
            stored.grid_spec
        )));
    }
    if !fits {
        return Err(CliError::Usage("network region layout does not match the dataset lattice".into()));
    }
    Ok(())
}

fn metrics_row(s: &mut String, fold: &str, m: &hcnn::network::EpochMetrics) {
    let eval = m.eval_acc.map_or("NA".to_string(), |a| a.to_string());
    let _ = writeln!(s, "{fold}\t{}\t{}\t{}\t{}\t{eval}", m.epoch, m.lr, m.train_loss, m.train_acc);
}

pub fn train(args: &CommonArgs, folds: Option<usize>) -> CliResult<Outcome> {
    let ctx = Context::new(args, "train")?;
    let section = ctx.cfg.train.clone().ok_or_else(|| CliError::Usage("train needs [data] and [train]".into()))?;
    let spec = ctx.cfg.network.clone().ok_or_else(|| CliError::Usage("train needs a network".into()))?;
    ctx.guard(&["metrics.tsv", "summary.tsv", "checkpoint.json"])?;
    let stored = load_dataset(&ctx.out, &section.dataset)?;
    check_compatible(&spec, &stored)?;
    let data = stored.data.as_dataset();
    let cfg = section.train_config(ctx.cfg.component_seed("train"));
    let k = folds.unwrap_or(section.folds);

    let mut metrics = String::from(METRICS_HEADER);
    let mut summary = String::from("fold\ttrain_acc\ttest_acc\n");
    let (net, eval_idx, fold, train_acc, eval_acc, report) = if k >= 2 {
        let mut first: Option<(Network, Vec<usize>)> = None;
        let cv = cross_validate_with(
            &spec,
            data,
            k,
            &cfg,
            |f, m| {
                eprintln!("fold {f} epoch {} loss {:.4} train {:.3} test {:.3}", m.epoch, m.train_loss, m.train_acc, m.eval_acc.unwrap_or(f64::NAN));
                metrics_row(&mut metrics, &f.to_string(), m);
            },
            |f, net, test| {
                if f == 0 {
                    first = Some((net.clone(), test.to_vec()));
                }
                Ok(())
            },
        )?;
        for r in &cv.folds {
            let _ = writeln!(summary, "{}\t{}\t{}", r.fold, r.train_acc, r.test_acc);
        }
        let _ = writeln!(summary, "mean\t{}\t{}", cv.mean_train_acc, cv.mean_test_acc);
        let _ = writeln!(summary, "std\t{}\t{}", cv.std_train_acc, cv.std_test_acc);
        let (net, test) = first.expect("at least two folds");
        let report = json!({
            "folds": k,
            "mean_train_acc": cv.mean_train_acc,
            "std_train_acc": cv.std_train_acc,
            "mean_test_acc": cv.mean_test_acc,
            "std_test_acc": cv.std_test_acc,
        });
        let (tr, te) = (cv.folds[0].train_acc, cv.folds[0].test_acc);
        (net, test, Some(0), tr, te, report)
    } else {
        let parts = (1.0 / section.holdout).round().max(2.0) as usize;
        let split = fold_assignment(data, parts, cfg.seed)?;
        let test = split[0].clone();
        let train_idx: Vec<usize> = split[1..].iter().flatten().copied().collect();
        let mut net = Network::build(&spec)?;
        fit(&mut net, data, &train_idx, Some(&test), &cfg, |m| {
            eprintln!("epoch {} loss {:.4} train {:.3} held-out {:.3}", m.epoch, m.train_loss, m.train_acc, m.eval_acc.unwrap_or(f64::NAN));
            metrics_row(&mut metrics, "all", m);
        })?;
        let tr = evaluate(&mut net, data, &train_idx, cfg.batch_size)?.accuracy;
        let te = evaluate(&mut net, data, &test, cfg.batch_size)?.accuracy;
        let _ = writeln!(summary, "all\t{tr}\t{te}");
        (net, test, None, tr, te, json!({ "folds": 1, "train_acc": tr, "test_acc": te }))
    };

    let mut net = net;
    let meta = CheckpointMeta {
        network: net.spec().cloned().unwrap_or(spec),
        dataset: section.dataset.clone(),
        dataset_hash: stored.hash.clone(),
        fold,
        train_acc,
        eval_acc,
    };
    let mut files = vec![write_text(&ctx.path("metrics.tsv"), &metrics)?, write_text(&ctx.path("summary.tsv"), &summary)?];
    files.extend(save_checkpoint(&ctx.out, &mut net, &meta, &eval_idx)?);
    let text = if k >= 2 {
        format!(
            "{k}-fold: train {:.4} ± {:.4}, test {:.4} ± {:.4}",
            report["mean_train_acc"].as_f64().unwrap_or(f64::NAN),
            report["std_train_acc"].as_f64().unwrap_or(f64::NAN),
            report["mean_test_acc"].as_f64().unwrap_or(f64::NAN),
            report["std_test_acc"].as_f64().unwrap_or(f64::NAN),
        )
    } else {
        format!("train {train_acc:.4}, held-out {eval_acc:.4}")
    };
    ctx.finish(&files, report, text)
}

pub fn eval(args: &CommonArgs) -> CliResult<Outcome> {
    let ctx = Context::new(args, "eval")?;
    ctx.guard(&["eval.tsv"])?;
    let (mut net, meta, idx) = load_checkpoint(&ctx.out)?;
    let stored = load_dataset(&ctx.out, &meta.dataset)?;
    if stored.hash != meta.dataset_hash {
        return Err(CliError::Usage(format!("{} changed since the checkpoint was trained", meta.dataset)));
    }
    let data = stored.data.as_dataset();
    let batch = ctx.cfg.train.as_ref().map_or(32, |t| t.batch_size);
    let e = evaluate(&mut net, data, &idx, batch)?;
    let mut table = String::from("index\tlabel\tprediction\n");
    for (i, p) in idx.iter().zip(&e.predictions) {
        let _ = writeln!(table, "{i}\t{}\t{p}", data.label(*i));
    }
    let files = vec![write_text(&ctx.path("eval.tsv"), &table)?];
    let summary = format!("accuracy {:.4} on {} held-out samples (loss {:.4})", e.accuracy, idx.len(), e.loss);
    ctx.finish(&files, json!({ "accuracy": e.accuracy, "loss": e.loss, "samples": idx.len() }), summary)
}
