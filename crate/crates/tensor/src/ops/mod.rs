//! Forward and backward kernels. Every function allocates its output; inputs
//! are never mutated.

mod activation;
mod blend;
mod conv;
mod loss;
mod pool;
mod shuffle;

pub use activation::{clamp01, leaky_relu, leaky_relu_backward};
pub use blend::{blend_with_identity, identity_kernel, scale};
pub use conv::{conv2d, conv2d_backward, conv2d_direct, Conv2dGrads};
pub use loss::{l1_loss, l1_loss_backward};
pub use pool::{max_pool2, max_pool2_backward, upsample2, upsample2_backward};
pub use shuffle::{concat_channels, depth_to_space, space_to_depth, split_channels};
