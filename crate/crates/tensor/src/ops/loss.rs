use crate::error::Result;
use crate::tensor::{ensure_same_shape, Tensor};

/// Mean absolute error as a rank-0 tensor. Accumulates in f64.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    ensure_same_shape("l1_loss", pred, target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(&p, &t)| f64::from((p - t).abs())).sum();
    Ok(Tensor::scalar((sum / pred.numel() as f64) as f32))
}

/// `upstream * sign(pred - target) / numel`, with `sign(0) = 0`.
pub fn l1_loss_backward(upstream: f32, pred: &Tensor, target: &Tensor) -> Tensor {
    let scale = upstream / pred.numel() as f32;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_parts(pred.shape().to_vec(), data)
}
