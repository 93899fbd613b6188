//! Experiment configuration.
//!
//! A configuration is a TOML document (or the same structure as JSON). Every
//! table rejects unknown keys, and every omitted key takes the default shown
//! below.
//!
//! ```toml
//! epochs = 300
//! batch_size = 128
//! seeds = [1, 2, 3, 4, 5]
//! output_dir = "runs"            # optional; CLI --out and SOCRATES_CALIB_OUT override
//!
//! [dataset]
//! split = { train = 0.6, val = 0.2, test = 0.2 }
//! split_seed = 0
//! # either generator parameters ...
//! [dataset.blobs]
//! classes = 4
//! dim = 2
//! n_per_class = 500
//! separation = 3.0
//! label_noise = 0.15
//! seed = 0
//! # ... or `csv = "path/to/data.csv"` (relative to the config file)
//!
//! [model]
//! hidden = [64, 64]
//! activation = "relu"            # or "tanh"
//!
//! [optimizer]
//! base_lr = 0.1
//! momentum = 0.9
//! weight_decay = 0.0005
//! period = 25                    # epochs between decays
//! factor = 0.5
//!
//! [metrics]
//! bins = 15
//!
//! [[losses]]
//! name = "socrates"              # socrates | sat | ce | focal | flsd | brier | ablation id
//! gamma = 2.0
//! alpha = 0.99
//! e_start = 0
//! beta = "exclude-gt"            # exclude-gt | exclude-gt-idk | fixed | disabled
//! # beta_value = 0.25            # only with beta = "fixed"
//! # beta_gradient = false
//!
//! [[losses]]
//! name = "ce"
//! # unknown_class = false        # baselines only: add an unlabelled extra output
//!
//! [sweep]                        # used by `sweep`
//! gamma = [1.0, 2.0]
//! alpha = [0.9, 0.99]
//!
//! [ablation]                     # used by `ablate`
//! checkpoints = [100, 200, 300]  # completed-epoch counts to tabulate
//! ```
//!
//! Per-loss keys: `socrates` takes `gamma`, `alpha`, `e_start`, `beta`,
//! `beta_value`, `beta_gradient`; ablation ids (`soc`, `soc-no-beta`, ...)
//! take `gamma`, `alpha`, `e_start`; `sat` takes `alpha`, `e_start`; `focal`
//! takes `gamma` and `unknown_class`; `ce`, `flsd`, `brier` take
//! `unknown_class`. Every loss accepts an optional `label`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{BlobsConfig, SplitFractions};
use crate::error::{Error, Result};
use crate::losses::{AblationVariant, BaselineKind, BetaVariant, LossSpec, SatConfig, SocratesConfig};
use crate::model::Activation;
use crate::optim::SgdConfig;
use crate::trainer::RunSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<BlobsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub split_seed: u64,
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs(BlobsConfig),
    Csv(PathBuf),
}

impl DatasetSpec {
    /// The standard synthetic benchmark when neither source is given.
    pub fn source(&self) -> DataSource {
        match (&self.blobs, &self.csv) {
            (_, Some(path)) => DataSource::Csv(path.clone()),
            (Some(b), None) => DataSource::Blobs(b.clone()),
            (None, None) => DataSource::Blobs(BlobsConfig::standard()),
        }
    }
}

fn d_hidden() -> Vec<usize> {
    vec![64, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            activation: Activation::default(),
        }
    }
}

fn d_bins() -> usize {
    crate::metrics::DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default = "d_bins")]
    pub bins: usize,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self { bins: d_bins() }
    }
}

/// Factorial grid over the first loss's `gamma` and `alpha`. An empty list
/// keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    /// Completed-epoch counts at which the ablation table reports metrics.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
}

/// One `[[losses]]` entry in its flat on-disk form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LossEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_gradient: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown_class: Option<bool>,
}

impl LossEntry {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    fn present_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        for (k, set) in [
            ("gamma", self.gamma.is_some()),
            ("alpha", self.alpha.is_some()),
            ("e_start", self.e_start.is_some()),
            ("beta", self.beta.is_some()),
            ("beta_value", self.beta_value.is_some()),
            ("beta_gradient", self.beta_gradient.is_some()),
            ("unknown_class", self.unknown_class.is_some()),
        ] {
            if set {
                keys.push(k);
            }
        }
        keys
    }

    fn socrates_base(&self) -> SocratesConfig {
        let d = SocratesConfig::default();
        SocratesConfig {
            gamma: self.gamma.unwrap_or(d.gamma),
            alpha: self.alpha.unwrap_or(d.alpha),
            e_start: self.e_start.unwrap_or(d.e_start),
            beta_gradient: self.beta_gradient.unwrap_or(false),
            ..d
        }
    }

    fn beta_variant(&self, path: &str) -> Result<BetaVariant> {
        let variant = match self.beta.as_deref().unwrap_or("exclude-gt") {
            "exclude-gt" => BetaVariant::ExcludeGt,
            "exclude-gt-idk" => BetaVariant::ExcludeGtAndIdk,
            "disabled" => BetaVariant::Disabled,
            "fixed" => BetaVariant::Fixed(self.beta_value.ok_or_else(|| Error::bad_config(format!("{path}.beta_value"), "required when beta = \"fixed\""))?),
            other => {
                return Err(Error::bad_config(
                    format!("{path}.beta"),
                    format!("unknown variant `{other}` (expected exclude-gt, exclude-gt-idk, fixed or disabled)"),
                ))
            }
        };
        if self.beta_value.is_some() && !matches!(variant, BetaVariant::Fixed(_)) {
            return Err(Error::bad_config(format!("{path}.beta_value"), "only valid with beta = \"fixed\""));
        }
        Ok(variant)
    }

    /// Resolves the entry; `path` (e.g. `losses[0]`) prefixes error fields.
    pub fn to_spec(&self, path: &str) -> Result<LossSpec> {
        let allowed: &[&str] = match self.name.as_str() {
            "socrates" => &["gamma", "alpha", "e_start", "beta", "beta_value", "beta_gradient"],
            "sat" => &["alpha", "e_start"],
            "focal" => &["gamma", "unknown_class"],
            "ce" | "flsd" | "brier" => &["unknown_class"],
            id if id.parse::<AblationVariant>().is_ok() => &["gamma", "alpha", "e_start"],
            other => {
                let ids: Vec<_> = AblationVariant::ALL.iter().map(|v| v.id()).collect();
                return Err(Error::bad_config(
                    format!("{path}.name"),
                    format!("unknown loss `{other}` (expected socrates, sat, ce, focal, flsd, brier or one of {})", ids.join(", ")),
                ));
            }
        };
        if let Some(k) = self.present_keys().into_iter().find(|k| !allowed.contains(k)) {
            return Err(Error::bad_config(format!("{path}.{k}"), format!("not a parameter of loss `{}`", self.name)));
        }
        let unknown_class = self.unknown_class.unwrap_or(false);
        let spec = match self.name.as_str() {
            "socrates" => LossSpec::Socrates(SocratesConfig {
                beta_variant: self.beta_variant(path)?,
                ..self.socrates_base()
            }),
            "sat" => {
                let base = self.socrates_base();
                LossSpec::Sat(SatConfig {
                    alpha: base.alpha,
                    e_start: base.e_start,
                })
            }
            "ce" => LossSpec::Baseline { kind: BaselineKind::Ce, unknown_class },
            "flsd" => LossSpec::Baseline { kind: BaselineKind::Flsd, unknown_class },
            "brier" => LossSpec::Baseline { kind: BaselineKind::Brier, unknown_class },
            "focal" => LossSpec::Baseline {
                kind: BaselineKind::Focal {
                    gamma: self.gamma.unwrap_or(SocratesConfig::default().gamma),
                },
                unknown_class,
            },
            id => LossSpec::Socrates(id.parse::<AblationVariant>()?.configure(&self.socrates_base())),
        };
        spec.validate().map_err(|e| relocate(e, path))?;
        Ok(spec)
    }

    /// Display label: the explicit `label`, else the resolved loss's label.
    pub fn resolved_label(&self, spec: &LossSpec) -> String {
        match (&self.label, self.name.parse::<AblationVariant>()) {
            (Some(l), _) => l.clone(),
            (None, Ok(v)) => v.id().to_string(),
            (None, Err(_)) => spec.label(),
        }
    }
}

/// Rewrites `loss.x` error fields to `<path>.x`.
fn relocate(e: Error, path: &str) -> Error {
    match e {
        Error::BadConfig { field, message } => {
            let rest = field.strip_prefix("loss.").unwrap_or(&field);
            Error::BadConfig {
                field: format!("{path}.{rest}"),
                message,
            }
        }
        other => other,
    }
}

fn d_epochs() -> usize {
    300
}
fn d_batch() -> usize {
    128
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    pub losses: Vec<LossEntry>,
    #[serde(default)]
    pub optimizer: SgdConfig,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSpec>,
}

/// A loss as configured: its report label and resolved objective.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedLoss {
    pub label: String,
    pub spec: LossSpec,
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let path = e.path().to_string();
    let field = if path == "." { "<root>".to_string() } else { path };
    Error::BadConfig {
        field,
        message: e.into_inner().to_string().trim().to_string(),
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(path_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates a JSON document with the same schema.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(path_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.json` or TOML file. A relative CSV dataset path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = if is_json { Self::from_json_str(&text)? } else { Self::from_toml_str(&text)? };
        if let (Some(csv), Some(dir)) = (&cfg.dataset.csv, path.parent()) {
            if csv.is_relative() {
                cfg.dataset.csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.blobs.is_some() && self.dataset.csv.is_some() {
            return Err(Error::bad_config("dataset", "give either `blobs` or `csv`, not both"));
        }
        if let Some(b) = &self.dataset.blobs {
            b.validate()?;
        }
        self.dataset.split.validate()?;
        if self.model.hidden.is_empty() {
            return Err(Error::bad_config("model.hidden", "need at least one hidden layer"));
        }
        if let Some(i) = self.model.hidden.iter().position(|&w| w == 0) {
            return Err(Error::bad_config(format!("model.hidden[{i}]"), "zero-width layer"));
        }
        if self.losses.is_empty() {
            return Err(Error::bad_config("losses", "at least one loss is required"));
        }
        let mut labels = BTreeSet::new();
        for nl in self.named_losses()? {
            if !labels.insert(nl.label.clone()) {
                return Err(Error::bad_config("losses", format!("duplicate label `{}`; set `label` to disambiguate", nl.label)));
            }
        }
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::bad_config("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::bad_config("batch_size", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::bad_config("seeds", "at least one seed is required"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::bad_config("seeds", "duplicate seed"));
        }
        if self.metrics.bins == 0 {
            return Err(Error::bad_config("metrics.bins", "must be >= 1"));
        }
        if let Some(s) = &self.sweep {
            for (i, &g) in s.gamma.iter().enumerate() {
                if !(g.is_finite() && g >= 0.0) {
                    return Err(Error::bad_config(format!("sweep.gamma[{i}]"), format!("{g} must be >= 0")));
                }
            }
            for (i, &a) in s.alpha.iter().enumerate() {
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::bad_config(format!("sweep.alpha[{i}]"), format!("{a} must be in (0, 1]")));
                }
            }
        }
        if let Some(a) = &self.ablation {
            if let Some(&c) = a.checkpoints.iter().find(|&&c| c == 0 || c > self.epochs) {
                return Err(Error::bad_config("ablation.checkpoints", format!("{c} is outside 1..={}", self.epochs)));
            }
        }
        Ok(())
    }

    pub fn named_losses(&self) -> Result<Vec<NamedLoss>> {
        self.losses
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let spec = entry.to_spec(&format!("losses[{i}]"))?;
                Ok(NamedLoss {
                    label: entry.resolved_label(&spec),
                    spec,
                })
            })
            .collect()
    }

    pub fn run_spec(&self, loss: &LossSpec, seed: u64) -> RunSpec {
        RunSpec {
            hidden: self.model.hidden.clone(),
            activation: self.model.activation,
            loss: loss.clone(),
            optimizer: self.optimizer.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            bins: self.metrics.bins,
            seed,
        }
    }

    /// Checkpoints for the ablation table; the final epoch when unset.
    pub fn checkpoints(&self) -> Vec<usize> {
        match &self.ablation {
            Some(a) if !a.checkpoints.is_empty() => a.checkpoints.clone(),
            _ => vec![self.epochs],
        }
    }
}
