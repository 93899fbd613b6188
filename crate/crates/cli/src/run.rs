use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use socrates_calib::config::{ExperimentConfig, LossEntry};
use socrates_calib::experiment::{self, mean_std, prepare_data, run_experiment, ExperimentOutcome, MeanStd, RunOptions};
use socrates_calib::losses::{AblationVariant, SocratesConfig};
use socrates_calib::metrics::{pareto_front, pareto_select, ParetoPoint};
use socrates_calib::par::Backend;
use socrates_calib::trainer::Split;
use socrates_calib::{Error, Result};

use crate::table::{self, pct, TABLE_METRICS};
use crate::{exit_code, RunArgs, DEFAULT_OUT, EXIT_OK};

pub const ABLATION_HEADER: &str = "epoch,metric,soc,soc-no-beta,soc-no-ft,soc-no-ft-idk,soc-no-ft-gt,soc-no-ft-beta,soc-no-ft-idk-beta,soc-no-ft-gt-beta,soc-no-ta,soc-no-ta-ft";
pub const SWEEP_HEADER: &str = "label,gamma,alpha,seeds,accuracy_mean,accuracy_std,ece_mean,ece_std,ada_ece_mean,ada_ece_std,cw_ece_mean,cw_ece_std,mce_mean,mce_std,on_front,selected";

fn load_config(a: &RunArgs) -> Result<ExperimentConfig> {
    if !a.config.exists() {
        return Err(Error::BadConfig {
            field: "--config".into(),
            message: format!("{} does not exist", a.config.display()),
        });
    }
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seeds) = &a.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(a: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    a.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn options(a: &RunArgs, out: PathBuf) -> Result<RunOptions> {
    if a.jobs == Some(0) {
        return Err(Error::BadConfig {
            field: "--jobs".into(),
            message: "must be >= 1".into(),
        });
    }
    Ok(RunOptions {
        out_dir: out,
        jobs: a.jobs,
        resume: a.resume,
        backend: Backend::auto(),
    })
}

fn print_matrix(cfg: &ExperimentConfig) -> Result<()> {
    let data = prepare_data(&cfg.dataset, None)?;
    let cells = experiment::cells(cfg)?;
    println!("{} cells ({} losses x {} seeds), {} epochs each", cells.len(), cfg.losses.len(), cfg.seeds.len(), cfg.epochs);
    println!("label\tseed\tcell");
    for c in &cells {
        println!("{}\t{}\t{}", c.label, c.seed, c.id(&data.fingerprint));
    }
    Ok(())
}

fn finish(outcome: &ExperimentOutcome) -> i32 {
    for e in outcome.manifest.failures() {
        eprintln!("cell {} ({} seed {}) failed: {}", e.id, e.label, e.seed, e.error.as_deref().unwrap_or("?"));
    }
    match outcome.first_error() {
        Some(e) => {
            eprintln!("{}", crate::error_report(e));
            exit_code(e)
        }
        None => EXIT_OK,
    }
}

fn execute(a: &RunArgs, cfg: &ExperimentConfig) -> Result<Option<ExperimentOutcome>> {
    if a.dry_run {
        print_matrix(cfg)?;
        return Ok(None);
    }
    let out = out_dir(a, cfg);
    let outcome = run_experiment(cfg, &options(a, out)?)?;
    println!("run directory: {}", outcome.out_dir.display());
    Ok(Some(outcome))
}

pub fn cmd_train(a: &RunArgs) -> Result<i32> {
    let cfg = load_config(a)?;
    let Some(outcome) = execute(a, &cfg)? else { return Ok(EXIT_OK) };
    let header: Vec<String> = ["loss", "val accuracy (%)", "val ECE (%)", "test accuracy (%)", "test ECE (%)"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = outcome
        .summary
        .iter()
        .map(|(label, m)| {
            let mut r = vec![label.clone()];
            for k in ["val_accuracy", "val_ece", "test_accuracy", "test_ece"] {
                r.push(m.get(k).map(pct).unwrap_or_default());
            }
            r
        })
        .collect();
    print!("{}", table::markdown(&header, &rows));
    Ok(finish(&outcome))
}

/// First loss of the configuration, which must be a Socrates variant.
fn socrates_base(cfg: &ExperimentConfig, command: &str) -> Result<LossEntry> {
    let base = cfg.losses[0].clone();
    if base.name != "socrates" && base.name.parse::<AblationVariant>().is_err() {
        return Err(Error::BadConfig {
            field: "losses[0].name".into(),
            message: format!("`{command}` needs a socrates base loss, found `{}`", base.name),
        });
    }
    Ok(base)
}

fn variant_entry(base: &LossEntry, name: &str) -> LossEntry {
    LossEntry {
        gamma: base.gamma,
        alpha: base.alpha,
        e_start: base.e_start,
        ..LossEntry::named(name)
    }
}

/// Final-epoch (or checkpoint) validation records grouped by label.
fn val_values(outcome: &ExperimentOutcome, epoch: usize, metric: &str) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for o in &outcome.outcomes {
        if let Some(r) = o.records.iter().find(|r| r.split == Split::Val && r.epoch == epoch) {
            let v = experiment::record_metrics(r).into_iter().find(|(k, _)| *k == metric).map(|(_, v)| v).expect("known metric");
            out.entry(o.cell.label.clone()).or_default().push(v);
        }
    }
    out
}

pub fn cmd_ablate(a: &RunArgs) -> Result<i32> {
    let mut cfg = load_config(a)?;
    let base = socrates_base(&cfg, "ablate")?;
    if base.beta.as_deref().is_some_and(|b| b != "exclude-gt") || base.beta_gradient == Some(true) {
        log::warn!("ablation variants use the default penalty; base beta settings are ignored");
    }
    cfg.losses = AblationVariant::ALL.iter().map(|v| variant_entry(&base, v.id())).collect();
    cfg.validate()?;
    let checkpoints = cfg.checkpoints();
    let Some(outcome) = execute(a, &cfg)? else { return Ok(EXIT_OK) };

    let ids: Vec<&str> = AblationVariant::ALL.iter().map(|v| v.id()).collect();
    let (mut csv_rows, mut md_rows) = (Vec::new(), Vec::new());
    for &c in &checkpoints {
        for metric in TABLE_METRICS {
            let values = val_values(&outcome, c - 1, metric);
            let stats: Vec<Option<MeanStd>> = ids.iter().map(|id| values.get(*id).map(|v| mean_std(v))).collect();
            let mut row = vec![c.to_string(), metric.to_string()];
            row.extend(stats.iter().map(|s| s.map(|m| m.mean.to_string()).unwrap_or_default()));
            csv_rows.push(row);
            let mut md = vec![c.to_string(), metric.to_string()];
            md.extend(stats.iter().map(|s| s.as_ref().map(pct).unwrap_or_else(|| "-".into())));
            md_rows.push(md);
        }
    }
    let header: Vec<String> = ABLATION_HEADER.split(',').map(String::from).collect();
    let dir = &outcome.out_dir;
    table::write(&dir.join("ablation.csv"), table::csv_string(&header, &csv_rows)?)?;
    let md = table::markdown(&header, &md_rows);
    table::write(&dir.join("ablation.md"), &md)?;
    print!("{md}");
    Ok(finish(&outcome))
}

fn fmt_grid(v: f64) -> String {
    format!("{v}")
}

pub fn cmd_sweep(a: &RunArgs) -> Result<i32> {
    let mut cfg = load_config(a)?;
    let base = socrates_base(&cfg, "sweep")?;
    let grid = cfg.sweep.clone().unwrap_or_default();
    if grid.gamma.is_empty() && grid.alpha.is_empty() {
        return Err(Error::BadConfig {
            field: "sweep".into(),
            message: "give a non-empty `gamma` and/or `alpha` list".into(),
        });
    }
    let d = SocratesConfig::default();
    let gammas = if grid.gamma.is_empty() { vec![base.gamma.unwrap_or(d.gamma)] } else { grid.gamma.clone() };
    let alphas = if grid.alpha.is_empty() { vec![base.alpha.unwrap_or(d.alpha)] } else { grid.alpha.clone() };
    let mut cells = Vec::new();
    cfg.losses = Vec::new();
    for &g in &gammas {
        for &al in &alphas {
            let label = format!("{} g={} a={}", base.name, fmt_grid(g), fmt_grid(al));
            cfg.losses.push(LossEntry {
                gamma: Some(g),
                alpha: Some(al),
                label: Some(label.clone()),
                ..base.clone()
            });
            cells.push((label, g, al));
        }
    }
    cfg.validate()?;
    let Some(outcome) = execute(a, &cfg)? else { return Ok(EXIT_OK) };

    let last = cfg.epochs - 1;
    let stats: Vec<BTreeMap<&str, MeanStd>> = cells
        .iter()
        .map(|(label, _, _)| TABLE_METRICS.iter().filter_map(|m| val_values(&outcome, last, m).get(label).map(|v| (*m, mean_std(v)))).collect())
        .collect();
    let complete: Vec<usize> = (0..cells.len()).filter(|&i| stats[i].len() == TABLE_METRICS.len()).collect();
    let points: Vec<ParetoPoint> = complete.iter().map(|&i| ParetoPoint::new(cells[i].0.clone(), 1.0 - stats[i]["accuracy"].mean, stats[i]["ece"].mean, stats[i]["cw_ece"].mean)).collect();
    let front = pareto_front(&points);
    let selected = if points.is_empty() { None } else { Some(complete[pareto_select(&points)?]) };

    let header: Vec<String> = SWEEP_HEADER.split(',').map(String::from).collect();
    let (mut csv_rows, mut md_rows) = (Vec::new(), Vec::new());
    for (i, (label, g, al)) in cells.iter().enumerate() {
        let on_front = complete.iter().position(|&j| j == i).map(|p| front[p]).unwrap_or(false);
        let mut row = vec![label.clone(), g.to_string(), al.to_string(), cfg.seeds.len().to_string()];
        let mut md = vec![label.clone(), g.to_string(), al.to_string(), cfg.seeds.len().to_string()];
        for m in TABLE_METRICS {
            match stats[i].get(m) {
                Some(s) => {
                    row.extend([s.mean.to_string(), s.std.to_string()]);
                    md.extend([format!("{:.2}", 100.0 * s.mean), format!("{:.2}", 100.0 * s.std)]);
                }
                None => {
                    row.extend([String::new(), String::new()]);
                    md.extend(["-".to_string(), "-".to_string()]);
                }
            }
        }
        let sel = selected == Some(i);
        row.extend([on_front.to_string(), sel.to_string()]);
        md.extend([on_front.to_string(), sel.to_string()]);
        csv_rows.push(row);
        md_rows.push(md);
    }
    let dir: &Path = &outcome.out_dir;
    table::write(&dir.join("sweep.csv"), table::csv_string(&header, &csv_rows)?)?;
    let md = table::markdown(&header, &md_rows);
    table::write(&dir.join("sweep.md"), &md)?;
    print!("{md}");
    if let Some(i) = selected {
        println!("selected: {}", cells[i].0);
    }
    Ok(finish(&outcome))
}
