use std::collections::BTreeSet;
use std::path::Path;

use socrates_calib::experiment::{cell_dir, read_logits, CellRecord, CellStatus, Manifest, LOGITS_TEST_FILE, LOGITS_VAL_FILE};
use socrates_calib::metrics::{CalibrationReport, PredictionLog};
use socrates_calib::par::Backend;
use socrates_calib::posthoc::{fit, fit_matrix_scaling, nll};
use socrates_calib::{Error, Result};

use crate::table;
use crate::EXIT_OK;

pub const CALIBRATION_HEADER: &str = "label,seed,cell,method,accuracy_before,accuracy_after,ece_before,ece_after,ada_ece_before,ada_ece_after,cw_ece_before,cw_ece_after,mce_before,mce_after,nll_before,nll_after";

fn report(logits: ndarray::ArrayView2<f64>, labels: &[usize], has_unknown: bool, bins: usize) -> Result<(CalibrationReport, f64)> {
    let log = PredictionLog::from_logits(logits, labels.to_vec(), has_unknown, Backend::auto())?;
    Ok((CalibrationReport::compute(&log, bins)?, nll(logits, labels)))
}

/// Fits `method` on each cell's validation logits and compares test metrics
/// before and after. Writes `scaler_<method>.json` per cell and
/// `calibration_<method>.csv` in the run directory.
pub fn cmd_calibrate(run: &Path, method: &str, l2: f64) -> Result<i32> {
    if !["ts", "vs", "ms"].contains(&method) {
        return Err(Error::BadConfig {
            field: "--method".into(),
            message: format!("unknown calibration method `{method}` (expected ts, vs or ms)"),
        });
    }
    if !(l2.is_finite() && l2 >= 0.0) {
        return Err(Error::BadConfig {
            field: "--l2".into(),
            message: "must be >= 0".into(),
        });
    }
    let manifest = Manifest::load(run)?;
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    let mut md_rows = Vec::new();
    for entry in manifest.cells.iter().filter(|c| c.status != CellStatus::Failed) {
        if !seen.insert(entry.id.clone()) {
            continue;
        }
        let dir = cell_dir(run, &entry.id);
        let cell = CellRecord::load(&dir)?;
        let val = read_logits(&dir.join(LOGITS_VAL_FILE))?;
        let test = read_logits(&dir.join(LOGITS_TEST_FILE))?;
        let scaler = if method == "ms" { fit_matrix_scaling(val.logits.view(), &val.labels, l2)? } else { fit(method, val.logits.view(), &val.labels)? };
        table::write(&dir.join(format!("scaler_{method}.json")), serde_json::to_vec_pretty(&scaler)?)?;

        let unknown = cell.spec.loss.has_unknown_class();
        let bins = cell.spec.bins;
        let (before, nll_before) = report(test.logits.view(), &test.labels, unknown, bins)?;
        let scaled = scaler.transform(test.logits.view())?;
        let (after, nll_after) = report(scaled.view(), &test.labels, unknown, bins)?;

        let pairs = [
            (before.accuracy, after.accuracy),
            (before.ece, after.ece),
            (before.ada_ece, after.ada_ece),
            (before.cw_ece, after.cw_ece),
            (before.mce, after.mce),
        ];
        let mut row = vec![entry.label.clone(), entry.seed.to_string(), entry.id.clone(), method.to_string()];
        for (b, a) in pairs {
            row.extend([b.to_string(), a.to_string()]);
        }
        row.extend([nll_before.to_string(), nll_after.to_string()]);
        rows.push(row);
        md_rows.push(vec![
            entry.label.clone(),
            entry.seed.to_string(),
            format!("{:.2}", 100.0 * before.accuracy),
            format!("{:.2}", 100.0 * after.accuracy),
            format!("{:.2}", 100.0 * before.ece),
            format!("{:.2}", 100.0 * after.ece),
        ]);
    }
    let header: Vec<String> = CALIBRATION_HEADER.split(',').map(String::from).collect();
    table::write(&run.join(format!("calibration_{method}.csv")), table::csv_string(&header, &rows)?)?;
    let md_header: Vec<String> = ["loss", "seed", "acc before (%)", "acc after (%)", "ECE before (%)", "ECE after (%)"].map(String::from).to_vec();
    print!("{}", table::markdown(&md_header, &md_rows));
    Ok(EXIT_OK)
}
