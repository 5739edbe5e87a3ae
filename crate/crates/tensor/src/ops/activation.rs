use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn check_slope(slope: f32) -> Result<()> {
    if !(0.0..1.0).contains(&slope) {
        return Err(TensorError::InvalidArgument { op: "leaky_relu", reason: format!("slope {slope} outside [0, 1)") });
    }
    Ok(())
}

/// `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu(input: &Tensor, slope: f32) -> Result<Tensor> {
    check_slope(slope)?;
    Ok(input.map(|v| if v >= 0.0 { v } else { slope * v }))
}

/// Uses the negative-side slope as the subgradient at exactly zero.
pub fn leaky_relu_backward(grad_out: &Tensor, input: &Tensor, slope: f32) -> Tensor {
    let data = grad_out.data().iter().zip(input.data()).map(|(&g, &x)| if x > 0.0 { g } else { slope * g }).collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

/// Clamps every element into `[0, 1]`.
pub fn clamp01(input: &Tensor) -> Tensor {
    input.map(|v| v.clamp(0.0, 1.0))
}
