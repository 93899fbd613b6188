//! Mini-batch training loop and per-epoch statistics.

use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::losses::{AdaptiveTargetStore, LossSpec};
use crate::metrics::{CalibrationReport, PredictionLog};
use crate::model::{init_mlp, Activation, MlpModel};
use crate::optim::{OptimizerState, SgdConfig};
use crate::par::Backend;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One row of the per-epoch log. Field order is the CSV column order.
///
/// The four `mean_conf_*` columns are the mean probability of the
/// ground-truth (`gt`) or unknown (`idk`) class over correctly or wrongly
/// predicted samples; an empty group reports 0. Without an unknown class the
/// `idk` columns and `idk_top1_freq` are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub ada_ece: f64,
    pub cw_ece: f64,
    pub mce: f64,
    pub mean_beta: f64,
    pub mean_target: f64,
    pub idk_top1_freq: f64,
    pub mean_conf_gt_correct: f64,
    pub mean_conf_gt_wrong: f64,
    pub mean_conf_idk_correct: f64,
    pub mean_conf_idk_wrong: f64,
}

pub const EPOCH_HEADER: &str = "epoch,split,loss,accuracy,ece,ada_ece,cw_ece,mce,mean_beta,mean_target,idk_top1_freq,mean_conf_gt_correct,mean_conf_gt_wrong,mean_conf_idk_correct,mean_conf_idk_wrong";

/// Settings shared by every epoch of a run.
#[derive(Debug, Clone, Copy)]
pub struct EpochSettings {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub bins: usize,
    pub backend: Backend,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Loss and all statistics of `model` on `ds`, with adaptive targets held at 1.
/// Also returns the logits.
pub fn evaluate(model: &MlpModel, ds: &Dataset, loss: &LossSpec, epoch: usize, split: Split, bins: usize, backend: Backend) -> Result<(EpochRecord, Array2<f64>)> {
    let logits = model.logits(ds.features.view(), backend)?;
    let lb = loss.eval_batch(logits.view(), &ds.labels, backend)?;
    let log = PredictionLog::from_logits(logits.view(), ds.labels.clone(), loss.has_unknown_class(), backend)?;
    let report = CalibrationReport::compute(&log, bins)?;
    let n = ds.len();
    let probs = log.probs();
    let idk = loss.has_unknown_class().then(|| probs.ncols() - 1);

    let (mut gt_c, mut gt_w, mut idk_c, mut idk_w) = (0.0, 0.0, 0.0, 0.0);
    let (mut n_c, mut n_w, mut idk_top) = (0usize, 0usize, 0usize);
    for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
        let p_gt = row[ds.labels[i]];
        let p_idk = idk.map_or(0.0, |k| row[k]);
        if log.correct()[i] {
            n_c += 1;
            gt_c += p_gt;
            idk_c += p_idk;
        } else {
            n_w += 1;
            gt_w += p_gt;
            idk_w += p_idk;
        }
        if let Some(k) = idk {
            // top-1 over all outputs, first index wins ties
            let top = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b }).0;
            if top == k {
                idk_top += 1;
            }
        }
    }
    let record = EpochRecord {
        epoch,
        split,
        loss: lb.loss,
        accuracy: report.accuracy,
        ece: report.ece,
        ada_ece: report.ada_ece,
        cw_ece: report.cw_ece,
        mce: report.mce,
        mean_beta: mean(lb.per_sample_beta.iter().sum(), n),
        mean_target: mean(lb.per_sample_target.iter().sum(), n),
        idk_top1_freq: mean(idk_top as f64, n),
        mean_conf_gt_correct: mean(gt_c, n_c),
        mean_conf_gt_wrong: mean(gt_w, n_w),
        mean_conf_idk_correct: mean(idk_c, n_c),
        mean_conf_idk_wrong: mean(idk_w, n_w),
    };
    Ok((record, logits))
}

fn diverged(epoch: usize, batch: usize, loss: f64) -> Error {
    Error::TrainingDiverged { epoch, batch, loss }
}

/// One pass over `train` in an order fixed by `(shuffle_seed, epoch)`.
///
/// The training record carries the running means of loss, penalty and target
/// over the epoch's batches, and the remaining statistics from an
/// end-of-epoch evaluation on the training split. The learning rate is taken
/// from `opt.lr` as is.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut MlpModel,
    opt: &mut OptimizerState,
    train: &Dataset,
    val: Option<&Dataset>,
    loss: &LossSpec,
    store: &mut AdaptiveTargetStore,
    epoch: usize,
    settings: &EpochSettings,
) -> Result<(EpochRecord, Option<EpochRecord>)> {
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if settings.batch_size == 0 {
        return Err(Error::bad_config("batch_size", "must be >= 1"));
    }
    let backend = settings.backend;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng::stream(settings.shuffle_seed, Stream::Shuffle, epoch as u64));

    let (mut loss_sum, mut beta_sum, mut target_sum) = (0.0, 0.0, 0.0);
    for (b, rows) in order.chunks(settings.batch_size).enumerate() {
        let batch = train.subset(rows);
        let cache = model.forward_cached(batch.features.view())?;
        let lb = match loss.train_batch(cache.logits().view(), &batch.labels, &batch.sample_ids, store, epoch, backend) {
            Ok(lb) => lb,
            Err(Error::NonFiniteLogit { .. }) => return Err(diverged(epoch, b, f64::NAN)),
            Err(e) => return Err(e),
        };
        if !lb.loss.is_finite() {
            return Err(diverged(epoch, b, lb.loss));
        }
        let grads = model.backward(&cache, &lb.grad_logits);
        opt.step(model, &grads);
        if !model.is_finite() {
            return Err(diverged(epoch, b, lb.loss));
        }
        loss_sum += lb.loss * rows.len() as f64;
        beta_sum += lb.per_sample_beta.iter().sum::<f64>();
        target_sum += lb.per_sample_target.iter().sum::<f64>();
    }

    let n = train.len();
    let (mut train_rec, _) = evaluate(model, train, loss, epoch, Split::Train, settings.bins, backend)?;
    train_rec.loss = loss_sum / n as f64;
    train_rec.mean_beta = beta_sum / n as f64;
    train_rec.mean_target = target_sum / n as f64;
    let val_rec = match val {
        Some(v) => Some(evaluate(model, v, loss, epoch, Split::Val, settings.bins, backend)?.0),
        None => None,
    };
    Ok((train_rec, val_rec))
}

/// Everything that determines a single training run apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossSpec,
    pub optimizer: SgdConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub bins: usize,
    pub seed: u64,
}

/// Result of [`train_run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: MlpModel,
    pub records: Vec<EpochRecord>,
}

/// Initialises a model from `spec.seed` and trains it for `spec.epochs`
/// epochs, applying the step learning-rate schedule. `on_epoch` sees each
/// epoch's records as they are produced.
pub fn train_run<F>(spec: &RunSpec, train: &Dataset, val: Option<&Dataset>, backend: Backend, mut on_epoch: F) -> Result<RunOutput>
where
    F: FnMut(&[EpochRecord]) -> Result<()>,
{
    spec.loss.validate()?;
    spec.optimizer.validate()?;
    let mut sizes = vec![train.dim()];
    sizes.extend(&spec.hidden);
    sizes.push(spec.loss.output_dim(train.classes));
    let mut model = init_mlp(&sizes, spec.activation, spec.seed)?;
    let mut opt = OptimizerState::new(&model, &spec.optimizer);
    let mut store = AdaptiveTargetStore::new(train.id_space());
    let settings = EpochSettings {
        batch_size: spec.batch_size,
        shuffle_seed: spec.seed,
        bins: spec.bins,
        backend,
    };
    let mut records = Vec::with_capacity(spec.epochs * 2);
    for epoch in 0..spec.epochs {
        opt.lr = spec.optimizer.lr_at(epoch);
        let (tr, va) = train_epoch(&mut model, &mut opt, train, val, &spec.loss, &mut store, epoch, &settings)?;
        let start = records.len();
        records.push(tr);
        records.extend(va);
        on_epoch(&records[start..])?;
    }
    Ok(RunOutput { model, records })
}
