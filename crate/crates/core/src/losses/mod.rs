//! Loss functions operating on batches of logits.
//!
//! Every loss returns its batch mean together with the analytic gradient with
//! respect to the logits. Losses built from a ground-truth log term and an
//! unknown-class log term (CE, Focal, FLSD, SAT and every Socrates variant)
//! share one per-sample kernel, so algebraic reductions between them hold bit
//! for bit rather than approximately.

mod ablation;
mod baseline;
mod beta;
mod kernel;
mod socrates;
mod target;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use ablation::{ablation_variant, AblationVariant};
pub use baseline::{baseline_loss, BaselineKind};
pub use beta::{dynamic_uncertainty_penalty, BetaVariant};
pub use socrates::{socrates_loss_forward, SatConfig, SocratesConfig, SocratesLoss};
pub use target::AdaptiveTargetStore;

use crate::error::{Error, Result};
use crate::par::Backend;

/// Probabilities are clamped to at least this value before any logarithm.
pub const PROB_EPS: f64 = 1e-12;

pub fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_EPS).ln()
}

/// A categorical distribution. For models with an unknown class the last
/// slot holds the unknown-class probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if let Some((i, &v)) = probs.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFiniteLogit { index: i, value: v });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::bad_config("probs", format!("sum is {sum}, expected 1")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the unknown class, by convention the last slot.
    pub fn idk_index(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Max-shifted softmax.
pub fn softmax_stable(logits: &[f64]) -> Result<ProbVector> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out)?;
    Ok(ProbVector { probs: out })
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) -> Result<()> {
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLogit { index, value });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Row-wise softmax of a `[n, K]` logit matrix.
pub fn softmax_rows(logits: ArrayView2<f64>, backend: Backend) -> Result<Array2<f64>> {
    let logits = logits.as_standard_layout();
    let (n, k) = logits.dim();
    let mut probs = Array2::<f64>::zeros((n, k));
    if n == 0 || k == 0 {
        return Ok(probs);
    }
    let input = logits.as_slice().expect("standard layout");
    let rows: Vec<&[f64]> = input.chunks(k).collect();
    let out = probs.as_slice_mut().expect("standard layout");
    let errors = std::sync::Mutex::new(None);
    backend.for_each_chunk_mut(&rows, out, k, 64, |_, inp, o| {
        for (row, dst) in inp.iter().zip(o.chunks_mut(k)) {
            if let Err(e) = softmax_into(row, dst) {
                errors.lock().unwrap().get_or_insert(e);
            }
        }
    });
    match errors.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(probs),
    }
}

/// Output of a batched loss evaluation.
#[derive(Debug, Clone)]
pub struct LossBatchResult {
    /// Batch-mean loss.
    pub loss: f64,
    pub grad_logits: Array2<f64>,
    /// Per-sample uncertainty penalty (zeros for losses without one).
    pub per_sample_beta: Vec<f64>,
    /// Per-sample ground-truth target (ones for losses without adaptive targets).
    pub per_sample_target: Vec<f64>,
}

/// Which objective a model is trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum LossSpec {
    Socrates(SocratesConfig),
    Sat(SatConfig),
    Baseline {
        kind: BaselineKind,
        /// Give the model an extra (never-labelled) unknown-class output.
        #[serde(default)]
        unknown_class: bool,
    },
}

impl LossSpec {
    pub fn has_unknown_class(&self) -> bool {
        match self {
            LossSpec::Socrates(_) | LossSpec::Sat(_) => true,
            LossSpec::Baseline { unknown_class, .. } => *unknown_class,
        }
    }

    /// Number of model outputs for a `classes`-class problem.
    pub fn output_dim(&self, classes: usize) -> usize {
        classes + usize::from(self.has_unknown_class())
    }

    pub fn uses_target_store(&self) -> bool {
        matches!(self, LossSpec::Socrates(_) | LossSpec::Sat(_))
    }

    /// Short human-readable label used in reports.
    pub fn label(&self) -> String {
        match self {
            LossSpec::Socrates(cfg) => match AblationVariant::from_config(cfg) {
                Ok(AblationVariant::Full) | Err(_) => format!("socrates(g={},a={},{})", cfg.gamma, cfg.alpha, cfg.beta_variant),
                Ok(v) => format!("{}(g={},a={})", v.id(), cfg.gamma, cfg.alpha),
            },
            LossSpec::Sat(cfg) => format!("sat(a={})", cfg.alpha),
            LossSpec::Baseline { kind, unknown_class } => {
                let base = kind.to_string();
                if *unknown_class {
                    format!("{base}+idk")
                } else {
                    base
                }
            }
        }
    }

    /// Training-time evaluation: updates adaptive targets in `store`.
    pub fn train_batch(
        &self,
        logits: ArrayView2<f64>,
        labels: &[usize],
        sample_ids: &[usize],
        store: &mut AdaptiveTargetStore,
        epoch: usize,
        backend: Backend,
    ) -> Result<LossBatchResult> {
        match self {
            LossSpec::Socrates(cfg) => SocratesLoss::new(cfg.clone())?.loss_and_grad(logits, labels, sample_ids, store, epoch, backend),
            LossSpec::Sat(cfg) => cfg.loss_and_grad(logits, labels, sample_ids, store, epoch, backend),
            LossSpec::Baseline { kind, .. } => baseline::baseline_batch(*kind, logits, labels, backend),
        }
    }

    /// Evaluation-time loss with targets frozen at the one-hot ground truth;
    /// nothing is stored.
    pub fn eval_batch(&self, logits: ArrayView2<f64>, labels: &[usize], backend: Backend) -> Result<LossBatchResult> {
        match self {
            LossSpec::Socrates(cfg) => SocratesLoss::new(cfg.clone())?.loss_and_grad_with_targets(logits, labels, None, backend),
            LossSpec::Sat(cfg) => cfg.loss_and_grad_with_targets(logits, labels, None, backend),
            LossSpec::Baseline { kind, .. } => baseline::baseline_batch(*kind, logits, labels, backend),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Socrates(cfg) => cfg.validate(),
            LossSpec::Sat(cfg) => cfg.validate(),
            LossSpec::Baseline { kind, .. } => kind.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform() {
        let p = softmax_stable(&[0.0, 0.0, 0.0]).unwrap();
        for &v in p.probs() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_logit_does_not_overflow() {
        let p = softmax_stable(&[1000.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] < 1e-300 && p[2] < 1e-300);
        assert!(p.probs().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_extended_precision() {
        // e^1, e^2, e^3 normalised; reference values computed with 50-digit arithmetic
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_6, 0.665_240_955_774_821_9];
        let p = softmax_stable(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in p.probs().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax_stable(&[0.0, f64::NAN]), Err(Error::NonFiniteLogit { index: 1, .. })));
        assert!(matches!(softmax_stable(&[f64::INFINITY, 0.0]), Err(Error::NonFiniteLogit { index: 0, .. })));
    }

    #[test]
    fn prob_vector_validates() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert_eq!(ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap().idk_index(), 2);
    }
}
