use std::io::Write;

use super::BinStats;
use crate::error::Result;

pub const RELIABILITY_HEADER: [&str; 5] = ["bin_lo", "bin_hi", "count", "acc", "conf"];
pub const PARETO_HEADER: [&str; 6] = ["model_id", "epoch", "error_rate", "ece", "cw_ece", "on_front"];

/// Reliability diagram as CSV.
pub fn write_reliability_csv<W: Write>(out: W, bins: &[BinStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RELIABILITY_HEADER)?;
    for b in bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), b.acc.to_string(), b.conf.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One point of an error-rate / ECE trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub model_id: String,
    pub epoch: usize,
    pub error_rate: f64,
    pub ece: f64,
    pub cw_ece: f64,
    pub on_front: bool,
}

pub fn write_pareto_csv<W: Write>(out: W, rows: &[ParetoRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PARETO_HEADER)?;
    for r in rows {
        w.write_record([
            r.model_id.clone(),
            r.epoch.to_string(),
            r.error_rate.to_string(),
            r.ece.to_string(),
            r.cw_ece.to_string(),
            r.on_front.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
