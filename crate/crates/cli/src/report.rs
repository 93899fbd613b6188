use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use socrates_calib::experiment::{cell_dir, mean_std, read_epochs, read_logits, record_metrics, CellRecord, CellStatus, Manifest, EPOCHS_FILE, LOGITS_VAL_FILE};
use socrates_calib::metrics::{bin_equal_width, pareto_front, pareto_select, write_pareto_csv, write_reliability_csv, ParetoPoint, ParetoRow, PredictionLog};
use socrates_calib::par::Backend;
use socrates_calib::trainer::{EpochRecord, RunSpec, Split};
use socrates_calib::{Error, Result};

use crate::table::{self, file_stem, pct, TABLE_METRICS};
use crate::EXIT_OK;

pub const TABLE_HEADER: &str = "loss,seeds,accuracy_mean,accuracy_std,ece_mean,ece_std,ada_ece_mean,ada_ece_std,cw_ece_mean,cw_ece_std,mce_mean,mce_std";

struct LoadedCell {
    key: String,
    seed: u64,
    dir: PathBuf,
    spec: RunSpec,
    records: Vec<EpochRecord>,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn warn(msg: String) {
    log::warn!("{msg}");
    eprintln!("warning: {msg}");
}

/// Reads every completed cell of `runs`. A label whose configuration differs
/// between run directories is suffixed with the directory it came from.
fn load_cells(runs: &[PathBuf]) -> Result<Vec<LoadedCell>> {
    let mut cells = Vec::new();
    let mut seen_ids = BTreeSet::new();
    let mut spec_of: BTreeMap<String, RunSpec> = BTreeMap::new();
    let mut fingerprints = BTreeSet::new();
    let mut epochs = BTreeSet::new();
    for run in runs {
        let manifest = Manifest::load(run)?;
        fingerprints.insert(manifest.data_fingerprint.clone());
        epochs.insert(manifest.config.epochs);
        for entry in manifest.cells.iter().filter(|c| c.status != CellStatus::Failed) {
            let dir = cell_dir(run, &entry.id);
            if !seen_ids.insert((entry.label.clone(), entry.id.clone())) {
                continue;
            }
            let rec = CellRecord::load(&dir)?;
            let records = read_epochs(&dir.join(EPOCHS_FILE))?;
            let unseeded = RunSpec { seed: 0, ..rec.spec.clone() };
            let key = match spec_of.get(&entry.label) {
                Some(s) if *s != unseeded => format!("{} [{}]", entry.label, run.display()),
                Some(_) => entry.label.clone(),
                None => {
                    spec_of.insert(entry.label.clone(), unseeded);
                    entry.label.clone()
                }
            };
            cells.push(LoadedCell {
                key,
                seed: entry.seed,
                dir,
                spec: rec.spec,
                records,
            });
        }
    }
    if fingerprints.len() > 1 {
        warn(format!("run directories use {} different datasets", fingerprints.len()));
    }
    if epochs.len() > 1 {
        warn(format!("run directories use different epoch counts: {epochs:?}"));
    }
    Ok(cells)
}

/// Writes reliability CSVs, the Pareto trajectory, the selected model and the
/// mean ± std table.
pub fn cmd_report(runs: &[PathBuf], out: Option<&Path>) -> Result<i32> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| runs[0].join("report"));
    let cells = load_cells(runs)?;
    if cells.is_empty() {
        return Err(Error::MissingArtifact(runs[0].join("cells")));
    }
    fs::create_dir_all(&out).map_err(|e| io(&out, e))?;

    // reliability diagrams of the final validation logits
    for c in &cells {
        let dump = read_logits(&c.dir.join(LOGITS_VAL_FILE))?;
        let log = PredictionLog::from_logits(dump.logits.view(), dump.labels, c.spec.loss.has_unknown_class(), Backend::auto())?;
        let bins = bin_equal_width(&log, c.spec.bins)?;
        let mut buf = Vec::new();
        write_reliability_csv(&mut buf, &bins)?;
        table::write(&out.join("reliability").join(format!("{}-seed{}.csv", file_stem(&c.key), c.seed)), buf)?;
    }

    // per-loss validation trajectories, averaged over seeds
    let mut traj: BTreeMap<(String, usize), Vec<&EpochRecord>> = BTreeMap::new();
    for c in &cells {
        for r in c.records.iter().filter(|r| r.split == Split::Val) {
            traj.entry((c.key.clone(), r.epoch)).or_default().push(r);
        }
    }
    let mut rows: Vec<ParetoRow> = traj
        .iter()
        .map(|((key, epoch), recs)| {
            let avg = |f: fn(&EpochRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / recs.len() as f64;
            ParetoRow {
                model_id: key.clone(),
                epoch: *epoch,
                error_rate: 1.0 - avg(|r| r.accuracy),
                ece: avg(|r| r.ece),
                cw_ece: avg(|r| r.cw_ece),
                on_front: false,
            }
        })
        .collect();
    let points: Vec<ParetoPoint> = rows.iter().map(|r| ParetoPoint::new(format!("{}@{}", r.model_id, r.epoch), r.error_rate, r.ece, r.cw_ece)).collect();
    for (row, on) in rows.iter_mut().zip(pareto_front(&points)) {
        row.on_front = on;
    }
    let mut buf = Vec::new();
    write_pareto_csv(&mut buf, &rows)?;
    table::write(&out.join("pareto.csv"), buf)?;
    let best = &rows[pareto_select(&points)?];
    let best_json = serde_json::json!({
        "model_id": best.model_id,
        "epoch": best.epoch,
        "error_rate": best.error_rate,
        "ece": best.ece,
        "cw_ece": best.cw_ece,
    });
    table::write(&out.join("best_model.json"), serde_json::to_vec_pretty(&best_json)?)?;

    // final test metrics, mean ± std over seeds
    let mut per_key: BTreeMap<String, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for c in &cells {
        if let Some(r) = c.records.iter().rev().find(|r| r.split == Split::Test) {
            let entry = per_key.entry(c.key.clone()).or_default();
            for (name, v) in record_metrics(r) {
                if TABLE_METRICS.contains(&name) {
                    entry.entry(name).or_default().push(v);
                }
            }
        }
    }
    let header: Vec<String> = TABLE_HEADER.split(',').map(String::from).collect();
    let mut csv_rows = Vec::new();
    let mut md_rows = Vec::new();
    for (key, metrics) in &per_key {
        let n = metrics.values().next().map_or(0, Vec::len);
        let mut row = vec![key.clone(), n.to_string()];
        let mut md = vec![key.clone(), n.to_string()];
        for m in TABLE_METRICS {
            let s = mean_std(&metrics[m]);
            row.extend([s.mean.to_string(), s.std.to_string()]);
            md.push(pct(&s));
        }
        csv_rows.push(row);
        md_rows.push(md);
    }
    table::write(&out.join("table.csv"), table::csv_string(&header, &csv_rows)?)?;
    let md_header: Vec<String> = ["loss", "seeds", "accuracy (%)", "ECE (%)", "AdaECE (%)", "CW-ECE (%)", "MCE (%)"].map(String::from).to_vec();
    let md = table::markdown(&md_header, &md_rows);
    table::write(&out.join("table.md"), &md)?;

    print!("{md}");
    println!("best model: {} at epoch {} (error {:.2}%, ECE {:.2}%)", best.model_id, best.epoch, 100.0 * best.error_rate, 100.0 * best.ece);
    println!("report written to {}", out.display());
    Ok(EXIT_OK)
}
