use std::path::PathBuf;

use contexp_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid raw image: {0}")]
    Raw(String),
    #[error("knob out of range: {0}")]
    Knob(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("packed input {width}x{height} is not divisible by {multiple}; pad to {pad_width}x{pad_height}")]
    Indivisible { width: usize, height: usize, multiple: usize, pad_width: usize, pad_height: usize },
    #[error("model: {0}")]
    Model(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f32 },
    #[error("frozen base parameter `{0}` changed during fine-tuning")]
    FrozenParamChanged(String),
    #[error("missing checkpoint {path}; produce it with: {hint}")]
    MissingCheckpoint { path: PathBuf, hint: String },
    #[error("metric: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
