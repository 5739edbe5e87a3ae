use thiserror::Error;

/// Errors raised by tensor construction, kernels and the autodiff tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength { op: &'static str, shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("{op}: dimension `{dim}` mismatch (expected {expected}, got {got})")]
    ShapeMismatch { op: &'static str, dim: &'static str, expected: usize, got: usize },
    #[error("{op}: spatial extent {extent} along `{dim}` must be even")]
    OddExtent { op: &'static str, dim: &'static str, extent: usize },
    #[error("{op}: kernel extent {extent} must be odd")]
    EvenKernel { op: &'static str, extent: usize },
    #[error("depth_to_space: channel count {channels} is not divisible by {factor}")]
    ChannelsNotDivisible { channels: usize, factor: usize },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("non-finite gradient for parameter `{name}`; update aborted")]
    NonFiniteGradient { name: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("{op}: no saved activation (forward ran with gradients disabled)")]
    MissingActivation { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;
