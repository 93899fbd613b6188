//! Command-line front-end for `socrates-calib`.
//!
//! Subcommands: `train`, `calibrate`, `report`, `ablate`, `sweep`. Exit codes:
//! 0 success, 1 other failure, 2 configuration error, 3 training divergence,
//! 4 missing artifact. Failures are also reported on stderr as one JSON
//! object `{"error", "message", "exit_code"}`.

mod calibrate;
mod report;
mod run;
mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use socrates_calib::Error;

pub use calibrate::{cmd_calibrate, CALIBRATION_HEADER};
pub use report::{cmd_report, TABLE_HEADER};
pub use run::{cmd_ablate, cmd_sweep, cmd_train, ABLATION_HEADER, SWEEP_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_MISSING: i32 = 4;

/// Output root used when neither `--out` nor the config names one.
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "socrates-calib", version, about = "Train, calibrate and compare confidence-calibrated classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed x loss cell of a configuration.
    Train(RunArgs),
    /// Fit a post-hoc scaler on validation logits and compare test metrics.
    Calibrate(CalibrateArgs),
    /// Reliability, Pareto and summary tables for one or more run directories.
    Report(ReportArgs),
    /// Run the ten component ablations of the configuration's first loss.
    Ablate(RunArgs),
    /// Full factorial gamma x alpha grid over the configuration's first loss.
    Sweep(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seeds overriding the configuration.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, env = "SOCRATES_CALIB_OUT")]
    pub out: Option<PathBuf>,
    /// Cells trained concurrently (default: logical cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Print the resolved cell matrix without training.
    #[arg(long)]
    pub dry_run: bool,
    /// Reuse completed cells found in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Run directory written by `train`.
    pub run: PathBuf,
    /// ts (temperature), vs (vector) or ms (matrix scaling).
    #[arg(long)]
    pub method: String,
    /// L2 weight on ||W - I||^2 for matrix scaling.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories written by `train`, `ablate` or `sweep`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Where to write the report (default: <first run>/report).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BadConfig { .. } | Error::UnknownVariant(_) | Error::BadArchitecture(_) => EXIT_CONFIG,
        Error::TrainingDiverged { .. } => EXIT_DIVERGED,
        Error::MissingArtifact(_) => EXIT_MISSING,
        _ => EXIT_FAILURE,
    }
}

/// One-line JSON error report.
pub fn error_report(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": exit_code(e),
    })
    .to_string()
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Calibrate(a) => cmd_calibrate(&a.run, &a.method, a.l2),
        Command::Report(a) => cmd_report(&a.runs, a.out.as_deref()),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_report(&e));
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}
