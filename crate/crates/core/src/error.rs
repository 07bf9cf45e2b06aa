use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("track too short: need {needed} samples, have {available}")]
    Length { needed: usize, available: usize },
    #[error("degenerate batch: no sample has a positive")]
    DegenerateBatch,
    #[error("split error: {0}")]
    Split(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("unknown space `{0}` for this model topology")]
    UnknownSpace(String),
    #[error("non-finite loss at step {step} (batch seed {batch_seed:#018x})")]
    NonFiniteLoss { step: u64, batch_seed: u64 },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("io error")]
    Io(#[from] std::io::Error),
    #[error("wav error")]
    Wav(#[from] hound::Error),
    #[error("json error")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter { .. } => "parameter",
            Error::Shape { .. } => "shape",
            Error::Length { .. } => "length",
            Error::DegenerateBatch => "degenerate_batch",
            Error::Split(_) => "split",
            Error::Metric(_) => "metric",
            Error::UnknownSpace(_) => "unknown_space",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::MissingFile(_) => "missing_file",
            Error::Io(_) => "io",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
        }
    }
}
