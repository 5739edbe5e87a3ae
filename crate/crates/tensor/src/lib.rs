//! Dense f32 tensors, the handful of NCHW kernels a small U-Net needs, a
//! tape-based reverse-mode autodiff over those kernels, and Adam.

mod adam;
mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{Adam, ParamUpdate};
pub use error::{Result, TensorError};
pub use graph::{Eager, Graph};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
