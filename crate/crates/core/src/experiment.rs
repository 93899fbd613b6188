//! Runs the seed x loss cell matrix of a configuration.
//!
//! Each cell trains one model and owns a directory named by a hash of
//! everything that determines its numbers (data fingerprint and [`RunSpec`]),
//! so identical cells from different experiments share results and completed
//! cells can be reused. Layout of an output directory:
//!
//! ```text
//! <out>/MANIFEST.json
//! <out>/summary.json
//! <out>/data/blobs-<fingerprint>.csv
//! <out>/cells/<cell id>/cell.json
//! <out>/cells/<cell id>/epochs.csv
//! <out>/cells/<cell id>/logits_val.csv
//! <out>/cells/<cell id>/logits_test.csv
//! <out>/cells/<cell id>/DONE
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DataSource, DatasetSpec, ExperimentConfig};
use crate::datasets::{cached_blobs, load_csv_dataset, split, Dataset};
use crate::error::{Error, Result};
use crate::par::Backend;
use crate::trainer::{evaluate, train_run, EpochRecord, RunSpec, Split};

pub const MANIFEST_FILE: &str = "MANIFEST.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const LOGITS_VAL_FILE: &str = "logits_val.csv";
pub const LOGITS_TEST_FILE: &str = "logits_test.csv";
pub const CELL_FILE: &str = "cell.json";
pub const DONE_FILE: &str = "DONE";

fn hex16(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Train / validation / test splits with a fingerprint of their provenance.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub fingerprint: String,
}

/// Loads or generates the dataset and splits it. Generated blobs are cached
/// in `cache_dir` when given.
pub fn prepare_data(spec: &DatasetSpec, cache_dir: Option<&Path>) -> Result<PreparedData> {
    let (ds, source_fp) = match spec.source() {
        DataSource::Blobs(cfg) => {
            cfg.validate()?;
            let ds = match cache_dir {
                Some(dir) => cached_blobs(&cfg, dir)?,
                None => crate::datasets::gen_gaussian_blobs(&cfg)?,
            };
            (ds, format!("blobs-{}", cfg.fingerprint()))
        }
        DataSource::Csv(path) => {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            (load_csv_dataset(&path)?, format!("csv-{}", hex16(&bytes)))
        }
    };
    let (train, val, test) = split(&ds, spec.split, spec.split_seed)?;
    let key = serde_json::to_vec(&(&source_fp, &spec.split, spec.split_seed))?;
    Ok(PreparedData {
        train,
        val,
        test,
        fingerprint: hex16(&key),
    })
}

/// One training run of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub seed: u64,
    pub spec: RunSpec,
}

impl Cell {
    /// Content address of the cell; the label does not enter it.
    pub fn id(&self, data_fingerprint: &str) -> String {
        let key = serde_json::to_vec(&(data_fingerprint, &self.spec)).expect("plain data serialises");
        hex16(&key)
    }
}

/// Cells in loss-major, seed-minor order.
pub fn cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for nl in cfg.named_losses()? {
        for &seed in &cfg.seeds {
            out.push(Cell {
                label: nl.label.clone(),
                seed,
                spec: cfg.run_spec(&nl.spec, seed),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Done,
    Reused,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The failure was a training divergence.
    #[serde(default)]
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub data_fingerprint: String,
    pub config: ExperimentConfig,
    pub cells: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// `{label: {metric: {mean, std}}}` over seeds.
pub type Summary = BTreeMap<String, BTreeMap<String, MeanStd>>;

/// Metric columns of a record, by name.
pub fn record_metrics(r: &EpochRecord) -> [(&'static str, f64); 13] {
    [
        ("loss", r.loss),
        ("accuracy", r.accuracy),
        ("ece", r.ece),
        ("ada_ece", r.ada_ece),
        ("cw_ece", r.cw_ece),
        ("mce", r.mce),
        ("mean_beta", r.mean_beta),
        ("mean_target", r.mean_target),
        ("idk_top1_freq", r.idk_top1_freq),
        ("mean_conf_gt_correct", r.mean_conf_gt_correct),
        ("mean_conf_gt_wrong", r.mean_conf_gt_wrong),
        ("mean_conf_idk_correct", r.mean_conf_idk_correct),
        ("mean_conf_idk_wrong", r.mean_conf_idk_wrong),
    ]
}

/// Final-epoch validation and test records of one cell.
pub fn final_records(records: &[EpochRecord]) -> (Option<&EpochRecord>, Option<&EpochRecord>) {
    (records.iter().rev().find(|r| r.split == Split::Val), records.iter().rev().find(|r| r.split == Split::Test))
}

/// Aggregates final-epoch `val_*` and `test_*` metrics per label.
pub fn summarize<'a, I>(cells: I) -> Summary
where
    I: IntoIterator<Item = (&'a str, &'a [EpochRecord])>,
{
    let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (label, records) in cells {
        let entry = values.entry(label.to_string()).or_default();
        let (val, test) = final_records(records);
        for (prefix, rec) in [("val", val), ("test", test)] {
            if let Some(rec) = rec {
                for (name, v) in record_metrics(rec) {
                    entry.entry(format!("{prefix}_{name}")).or_default().push(v);
                }
            }
        }
    }
    values.into_iter().map(|(label, m)| (label, m.into_iter().map(|(k, v)| (k, mean_std(&v))).collect())).collect()
}

/// Logits of one split as dumped next to the epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsDump {
    pub sample_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub logits: Array2<f64>,
}

pub fn write_logits<W: Write>(out: W, ds: &Dataset, logits: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..logits.ncols()).map(|k| format!("logit_{k}")));
    w.write_record(&header)?;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let mut rec = vec![ds.sample_ids[i].to_string(), ds.labels[i].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<logits>", e))?;
    Ok(())
}

pub fn read_logits(path: &Path) -> Result<LogitsDump> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let (mut ids, mut labels, mut flat) = (Vec::new(), Vec::new(), Vec::new());
    let mut width = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let parse_err = |col: usize, msg: String| Error::Parse {
            line,
            col: Some(col + 1),
            message: msg,
        };
        if rec.len() < 3 {
            return Err(Error::Parse {
                line,
                col: None,
                message: "expected sample_id, label and at least one logit".into(),
            });
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                line,
                col: None,
                message: "ragged row".into(),
            });
        }
        ids.push(rec[0].parse().map_err(|e| parse_err(0, format!("{e}")))?);
        labels.push(rec[1].parse().map_err(|e| parse_err(1, format!("{e}")))?);
        for (j, field) in rec.iter().enumerate().skip(2) {
            flat.push(field.parse::<f64>().map_err(|e| parse_err(j, format!("{e}")))?);
        }
    }
    let k = width.map_or(0, |w| w - 2);
    let logits = Array2::from_shape_vec((ids.len(), k), flat).map_err(|e| Error::Parse {
        line: 0,
        col: None,
        message: e.to_string(),
    })?;
    Ok(LogitsDump { sample_ids: ids, labels, logits })
}

pub fn read_epochs(path: &Path) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Where and how to execute cells.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for cells; `None` uses all logical cores.
    pub jobs: Option<usize>,
    /// Reuse cells whose directory already holds a completed result.
    pub resume: bool,
    pub backend: Backend,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub id: String,
    pub status: CellStatus,
    pub records: Vec<EpochRecord>,
    pub error: Option<Arc<Error>>,
}

pub fn cell_dir(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join("cells").join(id)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Contents of `cell.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellRecord {
    pub data_fingerprint: String,
    pub label: String,
    pub seed: u64,
    pub spec: RunSpec,
}

impl CellRecord {
    pub fn load(cell_dir: &Path) -> Result<Self> {
        let path = cell_dir.join(CELL_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn try_reuse(dir: &Path, cell: &Cell, data_fp: &str) -> Option<Vec<EpochRecord>> {
    if !dir.join(DONE_FILE).exists() {
        return None;
    }
    let stored = CellRecord::load(dir).ok()?;
    if stored.spec != cell.spec || stored.data_fingerprint != data_fp {
        return None;
    }
    read_epochs(&dir.join(EPOCHS_FILE)).ok()
}

fn run_cell(cell: &Cell, data: &PreparedData, dir: &Path, backend: Backend) -> Result<Vec<EpochRecord>> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let record = CellRecord {
        data_fingerprint: data.fingerprint.clone(),
        label: cell.label.clone(),
        seed: cell.seed,
        spec: cell.spec.clone(),
    };
    write_file(&dir.join(CELL_FILE), &serde_json::to_vec_pretty(&record)?)?;

    let epochs_path = dir.join(EPOCHS_FILE);
    let file = fs::File::create(&epochs_path).map_err(|e| Error::io(&epochs_path, e))?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let out = train_run(&cell.spec, &data.train, Some(&data.val), backend, |recs| {
        for r in recs {
            writer.serialize(r)?;
        }
        writer.flush().map_err(|e| Error::io(&epochs_path, e))
    })?;
    let mut records = out.records;
    let last = cell.spec.epochs - 1;
    let (val_rec, val_logits) = evaluate(&out.model, &data.val, &cell.spec.loss, last, Split::Val, cell.spec.bins, backend)?;
    debug_assert_eq!(Some(&val_rec), records.last());
    let (test_rec, test_logits) = evaluate(&out.model, &data.test, &cell.spec.loss, last, Split::Test, cell.spec.bins, backend)?;
    writer.serialize(&test_rec)?;
    writer.flush().map_err(|e| Error::io(&epochs_path, e))?;
    records.push(test_rec);

    let mut buf = Vec::new();
    write_logits(&mut buf, &data.val, &val_logits)?;
    write_file(&dir.join(LOGITS_VAL_FILE), &buf)?;
    buf.clear();
    write_logits(&mut buf, &data.test, &test_logits)?;
    write_file(&dir.join(LOGITS_TEST_FILE), &buf)?;
    write_file(&dir.join(DONE_FILE), b"")?;
    Ok(records)
}

fn execute(cell: &Cell, data: &PreparedData, opts: &RunOptions) -> CellOutcome {
    let id = cell.id(&data.fingerprint);
    let dir = cell_dir(&opts.out_dir, &id);
    if opts.resume {
        if let Some(records) = try_reuse(&dir, cell, &data.fingerprint) {
            log::info!("reusing {} seed {} ({id})", cell.label, cell.seed);
            return CellOutcome {
                cell: cell.clone(),
                id,
                status: CellStatus::Reused,
                records,
                error: None,
            };
        }
    }
    log::info!("training {} seed {} ({id})", cell.label, cell.seed);
    match run_cell(cell, data, &dir, opts.backend) {
        Ok(records) => CellOutcome {
            cell: cell.clone(),
            id,
            status: CellStatus::Done,
            records,
            error: None,
        },
        Err(e) => {
            log::warn!("{} seed {} failed: {e}", cell.label, cell.seed);
            CellOutcome {
                cell: cell.clone(),
                id,
                status: CellStatus::Failed,
                records: Vec::new(),
                error: Some(Arc::new(e)),
            }
        }
    }
}

/// Executes `cells` on a pool of `opts.jobs` workers. Cells sharing an id
/// are trained once. Outcomes are in input order.
pub fn run_cells(cells: &[Cell], data: &PreparedData, opts: &RunOptions) -> Result<Vec<CellOutcome>> {
    let mut unique: Vec<&Cell> = Vec::new();
    let mut index_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut slot = Vec::with_capacity(cells.len());
    for c in cells {
        let id = c.id(&data.fingerprint);
        let next = unique.len();
        let i = *index_of.entry(id).or_insert(next);
        if i == next {
            unique.push(c);
        }
        slot.push(i);
    }
    let outcomes = execute_pool(&unique, data, opts)?;
    Ok(cells
        .iter()
        .zip(slot)
        .map(|(c, i)| CellOutcome {
            cell: c.clone(),
            ..outcomes[i].clone()
        })
        .collect())
}

#[cfg(feature = "parallel")]
fn execute_pool(cells: &[&Cell], data: &PreparedData, opts: &RunOptions) -> Result<Vec<CellOutcome>> {
    use rayon::prelude::*;
    let jobs = opts.jobs.unwrap_or(0);
    if jobs == 1 || !opts.backend.is_parallel() {
        return Ok(cells.iter().map(|c| execute(c, data, opts)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::bad_config("jobs", e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(|c| execute(c, data, opts)).collect()))
}

#[cfg(not(feature = "parallel"))]
fn execute_pool(cells: &[&Cell], data: &PreparedData, opts: &RunOptions) -> Result<Vec<CellOutcome>> {
    Ok(cells.iter().map(|c| execute(c, data, opts)).collect())
}

/// Result of [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub outcomes: Vec<CellOutcome>,
    pub summary: Summary,
}

impl ExperimentOutcome {
    /// The first failure, preferring a divergence.
    pub fn first_error(&self) -> Option<&Error> {
        let errors = || self.outcomes.iter().filter_map(|o| o.error.as_deref());
        errors().find(|e| matches!(e, Error::TrainingDiverged { .. })).or_else(|| errors().next())
    }
}

/// Trains every cell of `cfg`, then writes `summary.json` and
/// `MANIFEST.json`. Cell failures are recorded in the manifest rather than
/// returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let data = prepare_data(&cfg.dataset, Some(&opts.out_dir.join("data")))?;
    let cells = cells(cfg)?;
    let outcomes = run_cells(&cells, &data, opts)?;

    let summary = summarize(outcomes.iter().filter(|o| o.status != CellStatus::Failed).map(|o| (o.cell.label.as_str(), o.records.as_slice())));
    write_file(&opts.out_dir.join(SUMMARY_FILE), &serde_json::to_vec_pretty(&summary)?)?;
    let manifest = Manifest {
        data_fingerprint: data.fingerprint.clone(),
        config: cfg.clone(),
        cells: outcomes
            .iter()
            .map(|o| ManifestEntry {
                id: o.id.clone(),
                label: o.cell.label.clone(),
                seed: o.cell.seed,
                status: o.status,
                error: o.error.as_ref().map(|e| e.to_string()),
                diverged: matches!(o.error.as_deref(), Some(Error::TrainingDiverged { .. })),
            })
            .collect(),
    };
    write_file(&opts.out_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(ExperimentOutcome {
        out_dir: opts.out_dir.clone(),
        manifest,
        outcomes,
        summary,
    })
}
