use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("NonFiniteLogit: logit {index} is {value}")]
    NonFiniteLogit { index: usize, value: f64 },

    #[error("GroundTruthIsUnknownClass: label {0} is the unknown-class slot")]
    GroundTruthIsUnknownClass(usize),

    #[error("UnknownSampleId: {id} (store holds {len} samples)")]
    UnknownSampleId { id: usize, len: usize },

    #[error("EmptyBatch")]
    EmptyBatch,

    #[error("UnknownVariant: {0}")]
    UnknownVariant(String),

    #[error("EmptyLog")]
    EmptyLog,

    #[error("TooFewSamples: {n} samples for {bins} bins")]
    TooFewSamples { n: usize, bins: usize },

    #[error("DimensionMismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("FitDiverged: {0}")]
    FitDiverged(String),

    #[error("BadArchitecture: {0}")]
    BadArchitecture(String),

    #[error("TrainingDiverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, batch: usize, loss: f64 },

    #[error("BadConfig: {field}: {message}")]
    BadConfig { field: String, message: String },

    #[error("ParseError at line {line}{}: {message}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        col: Option<usize>,
        message: String,
    },

    #[error("LabelError at line {line}: {message}")]
    Label { line: usize, message: String },

    #[error("TooFewPerClass: class {class} has {count} samples for {splits} splits")]
    TooFewPerClass {
        class: usize,
        count: usize,
        splits: usize,
    },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable variant name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFiniteLogit { .. } => "NonFiniteLogit",
            Error::GroundTruthIsUnknownClass(_) => "GroundTruthIsUnknownClass",
            Error::UnknownSampleId { .. } => "UnknownSampleId",
            Error::EmptyBatch => "EmptyBatch",
            Error::UnknownVariant(_) => "UnknownVariant",
            Error::EmptyLog => "EmptyLog",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::FitDiverged(_) => "FitDiverged",
            Error::BadArchitecture(_) => "BadArchitecture",
            Error::TrainingDiverged { .. } => "TrainingDiverged",
            Error::BadConfig { .. } => "BadConfig",
            Error::Parse { .. } => "ParseError",
            Error::Label { .. } => "LabelError",
            Error::TooFewPerClass { .. } => "TooFewPerClass",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn bad_config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::BadConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
