use crate::error::{Error, Result};

/// A candidate model for error-rate / ECE model selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub model_id: String,
    pub error_rate: f64,
    pub ece: f64,
    /// Tie-break key.
    pub cw_ece: f64,
}

impl ParetoPoint {
    pub fn new(model_id: impl Into<String>, error_rate: f64, ece: f64, cw_ece: f64) -> Self {
        Self {
            model_id: model_id.into(),
            error_rate,
            ece,
            cw_ece,
        }
    }

    fn dominates(&self, other: &ParetoPoint) -> bool {
        self.error_rate <= other.error_rate && self.ece <= other.ece && (self.error_rate < other.error_rate || self.ece < other.ece)
    }
}

/// `true` for every point no other point dominates under
/// (error rate, ECE) minimisation.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<bool> {
    points.iter().map(|p| !points.iter().any(|q| q.dominates(p))).collect()
}

/// Index of the selected model: the front member closest to the origin, ties
/// broken by smaller classwise ECE and then by position in `points`.
pub fn pareto_select(points: &[ParetoPoint]) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::EmptyLog);
    }
    let front = pareto_front(points);
    let dist = |p: &ParetoPoint| p.error_rate.hypot(p.ece);
    let best = points
        .iter()
        .enumerate()
        .filter(|(i, _)| front[*i])
        .min_by(|(i, a), (j, b)| dist(a).total_cmp(&dist(b)).then(a.cw_ece.total_cmp(&b.cw_ece)).then(i.cmp(j)))
        .map(|(i, _)| i)
        .expect("a non-empty set has a non-dominated point");
    Ok(best)
}
