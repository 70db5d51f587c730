use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("undefined SNR: noise has zero power")]
    UndefinedSnr,

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("duplicate entry: {0}")]
    DuplicateEntry(String),

    #[error("infeasible band layout: {0}")]
    InfeasibleLayout(String),

    #[error("undefined {metric}: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("checkpoint hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("safetensors: {0}")]
    SafeTensors(#[from] safetensors::SafeTensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
