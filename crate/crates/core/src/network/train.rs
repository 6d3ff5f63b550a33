//! Mini-batch SGD with step decay, evaluation, and k-fold cross-validation.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::nll_loss;
use super::model::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Labelled samples that can be gathered into per-branch input batches.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn classes(&self) -> usize;

    fn label(&self, index: usize) -> usize;

    /// One `batch × channels × points` array per network branch.
    fn inputs(&self, indices: &[usize]) -> Result<Vec<Array3<f64>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "TrainConfig::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "TrainConfig::default_decay")]
    pub decay: f64,
    #[serde(default = "TrainConfig::default_decay_every")]
    pub decay_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Replace batch-norm running moments by training-set averages after
    /// every epoch.
    #[serde(default = "TrainConfig::default_recalibrate")]
    pub recalibrate_bn: bool,
    /// Stop once an epoch ends at or above this training accuracy.
    #[serde(default)]
    pub stop_at_train_acc: Option<f64>,
}

impl TrainConfig {
    fn default_recalibrate() -> bool {
        true
    }

    fn default_lr() -> f64 {
        0.1
    }

    fn default_decay() -> f64 {
        0.1
    }

    fn default_decay_every() -> usize {
        30
    }

    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate: Self::default_lr(),
            decay: Self::default_decay(),
            decay_every: Self::default_decay_every(),
            seed,
            recalibrate_bn: Self::default_recalibrate(),
            stop_at_train_acc: None,
        }
    }

    /// `lr · decay^⌊epoch / decay_every⌋`, epochs counted from zero.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi((epoch / self.decay_every.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("batch size and learning rate must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidArgument(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub predictions: Vec<usize>,
}

fn check_indices(data: &dyn Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::IndexOutOfRange { index: bad, limit: data.len() });
    }
    Ok(())
}

/// Batches of `size` over `order`. A trailing batch shorter than half a batch
/// is merged into its predecessor: a handful of samples, possibly all of one
/// class, gives batch statistics noisy enough to wreck a converged model.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| 2 * b.len() < size) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    row.enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Sets every batch-norm running moment to the size-weighted average of its
/// batch moments over `indices`, leaving parameters untouched.
pub fn recalibrate_batch_norm(net: &mut Network, data: &dyn Dataset, indices: &[usize], batch_size: usize) -> Result<()> {
    check_indices(data, indices)?;
    let mut seen = 0usize;
    for batch in batches(indices, batch_size.max(2)) {
        seen += batch.len();
        net.set_bn_momentum(batch.len() as f64 / seen as f64);
        let result = net.forward(&data.inputs(batch)?, true);
        if result.is_err() {
            net.set_bn_momentum(0.1);
        }
        result?;
    }
    net.set_bn_momentum(0.1);
    Ok(())
}

/// Inference-mode accuracy and mean loss over `indices`.
pub fn evaluate(net: &mut Network, data: &dyn Dataset, indices: &[usize], batch_size: usize) -> Result<Evaluation> {
    check_indices(data, indices)?;
    let mut predictions = Vec::with_capacity(indices.len());
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let logp = net.forward(&data.inputs(chunk)?, false)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
        loss += nll_loss(&logp, &labels)?.0 * chunk.len() as f64;
        for (b, &y) in labels.iter().enumerate() {
            let p = argmax((0..logp.dim().1).map(|c| logp[[b, c, 0]]));
            correct += usize::from(p == y);
            predictions.push(p);
        }
    }
    let n = indices.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, loss: loss / n, predictions })
}

/// Trains in place. Gradients are batch means; every epoch reshuffles with a
/// seed derived from the config seed and the epoch number.
pub fn train(
    net: &mut Network,
    data: &dyn Dataset,
    train_idx: &[usize],
    eval_idx: Option<&[usize]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    check_indices(data, train_idx)?;
    if let Some(e) = eval_idx {
        check_indices(data, e)?;
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch-{epoch}")));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| data.label(i)).collect();
            let logp = net.forward(&data.inputs(batch)?, true)?;
            let (loss, dlogp) = nll_loss(&logp, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            net.backward(&dlogp)?;
            net.sgd_step(lr)?;
        }
        if cfg.recalibrate_bn {
            recalibrate_batch_norm(net, data, train_idx, cfg.batch_size)?;
        }
        let train_acc = evaluate(net, data, train_idx, cfg.batch_size)?.accuracy;
        let eval_acc = match eval_idx {
            Some(e) => Some(evaluate(net, data, e, cfg.batch_size)?.accuracy),
            None => None,
        };
        let m = EpochMetrics { epoch, lr, train_loss: total / order.len() as f64, train_acc, eval_acc };
        on_epoch(&m);
        history.push(m);
        if cfg.stop_at_train_acc.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub mean_train_acc: f64,
    pub std_train_acc: f64,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

/// Mean and population standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

/// Deterministic stratified split of `0..n` into `k` folds.
pub fn fold_assignment(data: &dyn Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > data.len() {
        return Err(Error::InvalidArgument(format!("cannot split {} samples into {k} folds", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds"));
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in 0..data.classes() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// k-fold cross-validation, building a fresh network per fold from `spec`
/// with a fold-specific seed.
pub fn cross_validate(spec: &NetworkSpec, data: &dyn Dataset, k: usize, cfg: &TrainConfig) -> Result<CrossValidation> {
    cross_validate_with(spec, data, k, cfg, |_, _| {}, |_, _, _| Ok(()))
}

/// [`cross_validate`] reporting each fold's epochs as `(fold, metrics)` and
/// handing every trained fold network to `on_fold` with its test indices.
pub fn cross_validate_with(
    spec: &NetworkSpec,
    data: &dyn Dataset,
    k: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochMetrics),
    mut on_fold: impl FnMut(usize, &mut Network, &[usize]) -> Result<()>,
) -> Result<CrossValidation> {
    let folds = fold_assignment(data, k, cfg.seed)?;
    let mut results = Vec::with_capacity(k);
    for (f, test) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let mut fold_spec = spec.clone();
        fold_spec.seed = derive_seed(spec.seed, &format!("fold-{f}"));
        let mut net = Network::build(&fold_spec)?;
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = derive_seed(cfg.seed, &format!("fold-{f}"));
        train(&mut net, data, &train_idx, Some(test), &fold_cfg, |m| on_epoch(f, m))?;
        let train_acc = evaluate(&mut net, data, &train_idx, cfg.batch_size)?.accuracy;
        let test_acc = evaluate(&mut net, data, test, cfg.batch_size)?.accuracy;
        on_fold(f, &mut net, test)?;
        results.push(FoldResult { fold: f, train_acc, test_acc });
    }
    let (mean_train_acc, std_train_acc) = mean_std(&results.iter().map(|r| r.train_acc).collect::<Vec<_>>());
    let (mean_test_acc, std_test_acc) = mean_std(&results.iter().map(|r| r.test_acc).collect::<Vec<_>>());
    Ok(CrossValidation { folds: results, mean_train_acc, std_train_acc, mean_test_acc, std_test_acc })
}
