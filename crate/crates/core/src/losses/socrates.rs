use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::beta::{penalty_with_argmax, BetaVariant};
use super::kernel::{run_batch, Modulation, TwoTerm};
use super::{clamped_ln, softmax_rows, AdaptiveTargetStore, LossBatchResult, ProbVector};
use crate::error::{Error, Result};
use crate::par::Backend;

fn default_alpha() -> f64 {
    0.9
}

fn default_gamma() -> f64 {
    2.0
}

/// Hyperparameters and ablation switches of the Socrates objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocratesConfig {
    /// Focal exponent, `>= 0`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Target momentum, in `(0, 1]`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Epochs before targets start adapting.
    #[serde(default)]
    pub e_start: usize,
    #[serde(default)]
    pub beta_variant: BetaVariant,
    #[serde(default)]
    pub drop_focal_gt: bool,
    #[serde(default)]
    pub drop_focal_idk: bool,
    #[serde(default)]
    pub drop_adaptive_target: bool,
    /// Let gradients flow through the penalty instead of treating it as a
    /// constant. Off by default.
    #[serde(default)]
    pub beta_gradient: bool,
}

impl Default for SocratesConfig {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            alpha: default_alpha(),
            e_start: 0,
            beta_variant: BetaVariant::ExcludeGt,
            drop_focal_gt: false,
            drop_focal_idk: false,
            drop_adaptive_target: false,
            beta_gradient: false,
        }
    }
}

impl SocratesConfig {
    pub fn new(gamma: f64, alpha: f64) -> Self {
        Self {
            gamma,
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::bad_config("loss.gamma", format!("{} must be >= 0", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::bad_config("loss.alpha", format!("{} must be in (0, 1]", self.alpha)));
        }
        self.beta_variant.validate()
    }
}

/// Self-adaptive training objective: `-(t ln p_gt + (1 - t) ln p_idk)` with
/// moving-average targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub e_start: usize,
}

impl SatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::bad_config("loss.alpha", format!("{} must be in (0, 1]", self.alpha)));
        }
        Ok(())
    }

    fn term(gt: usize, idk: usize, target: f64) -> TwoTerm {
        TwoTerm {
            gt,
            idk: Some(idk),
            w_gt: Modulation::ONE,
            w_idk: Modulation::ONE,
            target,
            beta: 1.0,
        }
    }

    pub fn loss_and_grad(
        &self,
        logits: ArrayView2<f64>,
        labels: &[usize],
        sample_ids: &[usize],
        store: &mut AdaptiveTargetStore,
        epoch: usize,
        backend: Backend,
    ) -> Result<LossBatchResult> {
        check_batch(logits, labels, Some(sample_ids))?;
        let probs = softmax_rows(logits, backend)?;
        let mut targets = Vec::with_capacity(labels.len());
        for ((&gt, &id), row) in labels.iter().zip(sample_ids).zip(probs.rows()) {
            check_label(gt, row.len())?;
            targets.push(store.update(id, row[gt], epoch, self.alpha, self.e_start, false)?);
        }
        self.finish(probs, labels, targets, backend)
    }

    pub fn loss_and_grad_with_targets(&self, logits: ArrayView2<f64>, labels: &[usize], targets: Option<&[f64]>, backend: Backend) -> Result<LossBatchResult> {
        check_batch(logits, labels, None)?;
        let probs = softmax_rows(logits, backend)?;
        for &gt in labels {
            check_label(gt, probs.ncols())?;
        }
        let targets = targets.map_or_else(|| vec![1.0; labels.len()], <[f64]>::to_vec);
        self.finish(probs, labels, targets, backend)
    }

    fn finish(&self, probs: Array2<f64>, labels: &[usize], targets: Vec<f64>, backend: Backend) -> Result<LossBatchResult> {
        let idk = probs.ncols() - 1;
        let (loss, grad_logits) = run_batch(probs.view(), backend, |i, p, h| Self::term(labels[i], idk, targets[i]).eval(p, h))?;
        Ok(LossBatchResult {
            loss,
            grad_logits,
            per_sample_beta: vec![1.0; labels.len()],
            per_sample_target: targets,
        })
    }
}

pub(crate) fn check_batch(logits: ArrayView2<f64>, labels: &[usize], ids: Option<&[usize]>) -> Result<()> {
    if labels.is_empty() || logits.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.nrows(),
            got: labels.len(),
        });
    }
    if let Some(ids) = ids {
        if ids.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: ids.len(),
            });
        }
    }
    Ok(())
}

/// Labels must address a real class, never the trailing unknown slot.
fn check_label(gt: usize, k: usize) -> Result<()> {
    if gt + 1 == k {
        Err(Error::GroundTruthIsUnknownClass(gt))
    } else if gt >= k {
        Err(Error::DimensionMismatch { expected: k - 1, got: gt })
    } else {
        Ok(())
    }
}

/// Batch-mean Socrates loss from probabilities with given targets and
/// penalties. The unknown class is the last slot of each vector.
pub fn socrates_loss_forward(probs: &[ProbVector], gt: &[usize], targets: &[f64], betas: &[f64], gamma: f64) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if gt.len() != probs.len() || targets.len() != probs.len() || betas.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            got: gt.len().min(targets.len()).min(betas.len()),
        });
    }
    let mut sum = 0.0;
    for (((p, &y), &t), &b) in probs.iter().zip(gt).zip(targets).zip(betas) {
        let focal = (1.0 - p[y]).powf(gamma);
        sum += focal * (t * clamped_ln(p[y]) + b * (1.0 - t) * clamped_ln(p[p.idk_index()]));
    }
    Ok(-sum / probs.len() as f64)
}

/// Socrates objective with its ablation switches applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SocratesLoss {
    cfg: SocratesConfig,
}

impl SocratesLoss {
    pub fn new(cfg: SocratesConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SocratesConfig {
        &self.cfg
    }

    fn term(&self, p: &[f64], gt: usize, target: f64, beta: f64) -> TwoTerm {
        let pg = p[gt];
        TwoTerm {
            gt,
            idk: Some(p.len() - 1),
            w_gt: Modulation::focal_if(!self.cfg.drop_focal_gt, pg, self.cfg.gamma),
            w_idk: Modulation::focal_if(!self.cfg.drop_focal_idk, pg, self.cfg.gamma),
            target,
            beta,
        }
    }

    /// Batch-mean loss with `targets` and `betas` supplied by the caller and
    /// held fixed. This is the function whose logit derivative
    /// [`SocratesLoss::loss_and_grad`] returns.
    pub fn forward_detached(&self, logits: ArrayView2<f64>, labels: &[usize], targets: &[f64], betas: &[f64]) -> Result<f64> {
        check_batch(logits, labels, None)?;
        let probs = softmax_rows(logits, Backend::Sequential)?;
        let mut sum = 0.0;
        let mut scratch = vec![0.0; probs.ncols()];
        for (i, row) in probs.rows().into_iter().enumerate() {
            check_label(labels[i], row.len())?;
            let p = row.to_vec();
            sum += self.term(&p, labels[i], targets[i], betas[i]).eval(&p, &mut scratch);
        }
        Ok(sum / labels.len() as f64)
    }

    /// Batch-mean loss with penalties recomputed from the current
    /// probabilities (targets still fixed). Differentiating this matches the
    /// gradient when `beta_gradient` is enabled.
    pub fn forward_with_live_beta(&self, logits: ArrayView2<f64>, labels: &[usize], targets: &[f64]) -> Result<f64> {
        let probs = softmax_rows(logits, Backend::Sequential)?;
        let betas = probs
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(row, &gt)| penalty_with_argmax(row.as_slice().expect("contiguous row"), gt, self.cfg.beta_variant).map(|(b, _)| b))
            .collect::<Result<Vec<_>>>()?;
        self.forward_detached(logits, labels, targets, &betas)
    }

    /// Training step: computes penalties, updates the adaptive targets of the
    /// batch samples, then evaluates the loss and its logit gradient.
    pub fn loss_and_grad(
        &self,
        logits: ArrayView2<f64>,
        labels: &[usize],
        sample_ids: &[usize],
        store: &mut AdaptiveTargetStore,
        epoch: usize,
        backend: Backend,
    ) -> Result<LossBatchResult> {
        check_batch(logits, labels, Some(sample_ids))?;
        let probs = softmax_rows(logits, backend)?;
        let mut targets = Vec::with_capacity(labels.len());
        for ((&gt, &id), row) in labels.iter().zip(sample_ids).zip(probs.rows()) {
            check_label(gt, row.len())?;
            let frozen = self.cfg.drop_adaptive_target;
            targets.push(store.update(id, row[gt], epoch, self.cfg.alpha, self.cfg.e_start, frozen)?);
        }
        self.finish(probs, labels, targets, backend)
    }

    /// As [`SocratesLoss::loss_and_grad`] but with explicit targets (one-hot
    /// when `None`) and no store.
    pub fn loss_and_grad_with_targets(&self, logits: ArrayView2<f64>, labels: &[usize], targets: Option<&[f64]>, backend: Backend) -> Result<LossBatchResult> {
        check_batch(logits, labels, None)?;
        let probs = softmax_rows(logits, backend)?;
        for &gt in labels {
            check_label(gt, probs.ncols())?;
        }
        let targets = match targets {
            Some(t) if t.len() != labels.len() => {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    got: t.len(),
                })
            }
            Some(t) => t.to_vec(),
            None => vec![1.0; labels.len()],
        };
        self.finish(probs, labels, targets, backend)
    }

    fn finish(&self, probs: Array2<f64>, labels: &[usize], targets: Vec<f64>, backend: Backend) -> Result<LossBatchResult> {
        let mut betas = Vec::with_capacity(labels.len());
        let mut competitors = Vec::with_capacity(labels.len());
        for (row, &gt) in probs.rows().into_iter().zip(labels) {
            let (b, j) = penalty_with_argmax(row.as_slice().expect("contiguous row"), gt, self.cfg.beta_variant)?;
            betas.push(b);
            competitors.push(j);
        }
        let live_beta = self.cfg.beta_gradient;
        let (loss, grad_logits) = run_batch(probs.view(), backend, |i, p, h| {
            let term = self.term(p, labels[i], targets[i], betas[i]);
            let loss = term.eval(p, h);
            if live_beta {
                if let Some(j) = competitors[i] {
                    let d = term.dloss_dbeta(p);
                    let idk = p.len() - 1;
                    h[j] += d * p[j];
                    h[idk] -= d * p[idk];
                }
            }
            loss
        })?;
        Ok(LossBatchResult {
            loss,
            grad_logits,
            per_sample_beta: betas,
            per_sample_target: targets,
        })
    }
}
