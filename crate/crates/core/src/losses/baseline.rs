use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::kernel::{run_batch, Modulation, TwoTerm};
use super::socrates::check_batch;
use super::{softmax_rows, LossBatchResult};
use crate::error::{Error, Result};
use crate::par::Backend;

/// Sample-dependent focal schedule: gamma 5 below this ground-truth
/// probability, 3 at or above it.
pub const FLSD_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineKind {
    Ce,
    Focal { gamma: f64 },
    Flsd,
    Brier,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::Ce => write!(f, "ce"),
            BaselineKind::Focal { gamma } => write!(f, "focal(g={gamma})"),
            BaselineKind::Flsd => write!(f, "flsd"),
            BaselineKind::Brier => write!(f, "brier"),
        }
    }
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineKind::Focal { gamma } if !(gamma.is_finite() && *gamma >= 0.0) => {
                Err(Error::bad_config("loss.gamma", format!("{gamma} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    fn focal_gamma(&self, p_gt: f64) -> f64 {
        match self {
            BaselineKind::Ce | BaselineKind::Brier => 0.0,
            BaselineKind::Focal { gamma } => *gamma,
            BaselineKind::Flsd => {
                if p_gt < FLSD_THRESHOLD {
                    5.0
                } else {
                    3.0
                }
            }
        }
    }
}

/// Batch-mean baseline loss and its gradient with respect to the logits.
pub fn baseline_loss(kind: BaselineKind, logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let out = baseline_batch(kind, logits, labels, Backend::Sequential)?;
    Ok((out.loss, out.grad_logits))
}

pub(crate) fn baseline_batch(kind: BaselineKind, logits: ArrayView2<f64>, labels: &[usize], backend: Backend) -> Result<LossBatchResult> {
    kind.validate()?;
    check_batch(logits, labels, None)?;
    let k = logits.ncols();
    if k < 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: k });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::DimensionMismatch { expected: k, got: bad });
    }
    let probs = softmax_rows(logits, backend)?;
    let (loss, grad_logits) = match kind {
        BaselineKind::Brier => run_batch(probs.view(), backend, |i, p, h| {
            let mut loss = 0.0;
            for (j, (&pj, hj)) in p.iter().zip(h.iter_mut()).enumerate() {
                let diff = pj - if j == labels[i] { 1.0 } else { 0.0 };
                loss += diff * diff;
                *hj = pj * 2.0 * diff;
            }
            loss
        })?,
        _ => run_batch(probs.view(), backend, |i, p, h| {
            let gt = labels[i];
            let gamma = kind.focal_gamma(p[gt]);
            let term = TwoTerm {
                gt,
                idk: None,
                w_gt: Modulation::focal(p[gt], gamma),
                w_idk: Modulation::ONE,
                target: 1.0,
                beta: 0.0,
            };
            term.eval(p, h)
        })?,
    };
    let n = labels.len();
    Ok(LossBatchResult {
        loss,
        grad_logits,
        per_sample_beta: vec![0.0; n],
        per_sample_target: vec![1.0; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ce_uniform_binary() {
        let (loss, _) = baseline_loss(BaselineKind::Ce, array![[0.0, 0.0]].view(), &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn focal_gamma_zero_is_ce() {
        let logits = array![[0.2, -0.3, 1.1], [0.0, 2.0, -1.0], [-0.5, 0.5, 0.25]];
        let labels = [2, 1, 0];
        let (ce, gce) = baseline_loss(BaselineKind::Ce, logits.view(), &labels).unwrap();
        let (fl, gfl) = baseline_loss(BaselineKind::Focal { gamma: 0.0 }, logits.view(), &labels).unwrap();
        assert_eq!(ce, fl);
        assert_eq!(gce, gfl);
    }

    #[test]
    fn brier_perfect_prediction() {
        let (loss, grad) = baseline_loss(BaselineKind::Brier, array![[800.0, 0.0, 0.0]].view(), &[0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-300));
    }

    #[test]
    fn flsd_schedule() {
        assert_eq!(BaselineKind::Flsd.focal_gamma(0.1), 5.0);
        assert_eq!(BaselineKind::Flsd.focal_gamma(0.2), 3.0);
        assert_eq!(BaselineKind::Flsd.focal_gamma(0.9), 3.0);
    }

    #[test]
    fn errors() {
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(baseline_loss(BaselineKind::Ce, empty.view(), &[]), Err(Error::EmptyBatch)));
        assert!(baseline_loss(BaselineKind::Ce, array![[0.0]].view(), &[0]).is_err());
        assert!(baseline_loss(BaselineKind::Focal { gamma: -1.0 }, array![[0.0, 1.0]].view(), &[0]).is_err());
    }
}
