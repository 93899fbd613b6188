//! Calibration metrics and model selection.
//!
//! All metrics are reported as fractions in `[0, 1]`; reports multiply by 100.

mod binning;
mod export;
mod pareto;

use ndarray::{Array2, ArrayView1, ArrayView2};

pub use binning::{ada_ece, adaptive_bins, bin_equal_width, bin_index, cw_ece, ece, mce, BinStats};
pub use export::{write_pareto_csv, write_reliability_csv, ParetoRow, PARETO_HEADER, RELIABILITY_HEADER};
pub use pareto::{pareto_front, pareto_select, ParetoPoint};

use crate::error::{Error, Result};
use crate::losses::softmax_rows;
use crate::par::Backend;

/// Number of equal-width bins used unless configured otherwise.
pub const DEFAULT_BINS: usize = 15;

/// Predictions of a model on a labelled set.
///
/// For models with an unknown class the last probability column is that
/// class; confidence and the predicted class are taken over the real classes
/// only.
#[derive(Debug, Clone)]
pub struct PredictionLog {
    probs: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
    has_unknown: bool,
    confidences: Vec<f64>,
    predicted: Vec<usize>,
    correct: Vec<bool>,
}

impl PredictionLog {
    pub fn new(probs: Array2<f64>, labels: Vec<usize>, has_unknown: bool) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyLog);
        }
        if probs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: probs.nrows(),
                got: labels.len(),
            });
        }
        let classes = probs.ncols() - usize::from(has_unknown);
        if classes == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::DimensionMismatch { expected: classes, got: bad });
        }
        let mut confidences = Vec::with_capacity(labels.len());
        let mut predicted = Vec::with_capacity(labels.len());
        for row in probs.rows() {
            let (arg, max) = row.iter().take(classes).copied().enumerate().fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
            predicted.push(arg);
            confidences.push(max);
        }
        let correct = predicted.iter().zip(&labels).map(|(p, y)| p == y).collect();
        Ok(Self {
            probs,
            labels,
            classes,
            has_unknown,
            confidences,
            predicted,
            correct,
        })
    }

    pub fn from_logits(logits: ArrayView2<f64>, labels: Vec<usize>, has_unknown: bool, backend: Backend) -> Result<Self> {
        Self::new(softmax_rows(logits, backend)?, labels, has_unknown)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of real classes.
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn has_unknown(&self) -> bool {
        self.has_unknown
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn correct(&self) -> &[bool] {
        &self.correct
    }

    pub fn unknown_column(&self) -> Option<ArrayView1<'_, f64>> {
        self.has_unknown.then(|| self.probs.column(self.classes))
    }

    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }
}

/// The metric family evaluated for one prediction log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationReport {
    pub accuracy: f64,
    pub ece: f64,
    pub mce: f64,
    pub ada_ece: f64,
    pub cw_ece: f64,
}

impl CalibrationReport {
    /// AdaECE needs at least `bins` samples; with fewer it falls back to
    /// `n` equal-mass bins.
    pub fn compute(log: &PredictionLog, bins: usize) -> Result<Self> {
        Ok(Self {
            accuracy: log.accuracy(),
            ece: ece(log, bins)?,
            mce: mce(log, bins)?,
            ada_ece: ada_ece(log, bins.min(log.len()))?,
            cw_ece: cw_ece(log, bins)?,
        })
    }

    pub fn error_rate(&self) -> f64 {
        1.0 - self.accuracy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn unknown_column_excluded_from_decisions() {
        let probs = array![[0.2, 0.1, 0.7], [0.5, 0.3, 0.2]];
        let log = PredictionLog::new(probs, vec![0, 1], true).unwrap();
        assert_eq!(log.classes(), 2);
        assert_eq!(log.predicted(), &[0, 0]);
        assert_eq!(log.confidences(), &[0.2, 0.5]);
        assert_eq!(log.correct(), &[true, false]);
        assert_eq!(log.unknown_column().unwrap().to_vec(), vec![0.7, 0.2]);
        assert_eq!(log.accuracy(), 0.5);
    }

    #[test]
    fn rejects_empty_and_bad_labels() {
        assert!(matches!(PredictionLog::new(Array2::zeros((0, 3)), vec![], false), Err(Error::EmptyLog)));
        assert!(PredictionLog::new(array![[0.5, 0.5]], vec![2], false).is_err());
        // the unknown slot is not a valid label
        assert!(PredictionLog::new(array![[0.5, 0.3, 0.2]], vec![2], true).is_err());
    }
}
