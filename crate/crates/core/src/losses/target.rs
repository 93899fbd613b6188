use crate::error::{Error, Result};

/// Per-sample adaptive targets (the ground-truth component), keyed by the
/// immutable dataset sample id.
///
/// Each sample is updated at most once per epoch. Re-evaluating a sample
/// within the same epoch recomputes its target from the previous epoch's value
/// instead of compounding the moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveTargetStore {
    targets: Vec<f64>,
    previous: Vec<f64>,
    epoch_last_updated: Vec<Option<usize>>,
}

impl AdaptiveTargetStore {
    /// Every target starts at 1, the one-hot ground truth.
    pub fn new(n_samples: usize) -> Self {
        Self {
            targets: vec![1.0; n_samples],
            previous: vec![1.0; n_samples],
            epoch_last_updated: vec![None; n_samples],
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn get(&self, sample_id: usize) -> Result<f64> {
        self.targets.get(sample_id).copied().ok_or(Error::UnknownSampleId {
            id: sample_id,
            len: self.targets.len(),
        })
    }

    pub fn epoch_last_updated(&self, sample_id: usize) -> Option<usize> {
        self.epoch_last_updated.get(sample_id).copied().flatten()
    }

    /// Moving-average update `alpha * t_prev + (1 - alpha) * p_gt`, applied
    /// from epoch `e_start` on. Before that, or when `frozen`, the target is 1.
    pub fn update(&mut self, sample_id: usize, p_gt: f64, epoch: usize, alpha: f64, e_start: usize, frozen: bool) -> Result<f64> {
        let len = self.targets.len();
        if sample_id >= len {
            return Err(Error::UnknownSampleId { id: sample_id, len });
        }
        if frozen || epoch < e_start {
            return Ok(1.0);
        }
        let p_gt = p_gt.clamp(0.0, 1.0);
        let prev = match self.epoch_last_updated[sample_id] {
            Some(e) if e == epoch => self.previous[sample_id],
            _ => self.targets[sample_id],
        };
        let t = (alpha * prev + (1.0 - alpha) * p_gt).clamp(0.0, 1.0);
        self.previous[sample_id] = prev;
        self.targets[sample_id] = t;
        self.epoch_last_updated[sample_id] = Some(epoch);
        Ok(t)
    }
}
