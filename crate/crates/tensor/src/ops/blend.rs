//! Affine blending of a square convolution kernel with the identity kernel.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Dirac kernel of shape `[channels, channels, k, k]`: 1 at the centre tap of
/// each diagonal (c, c) slice, 0 everywhere else.
pub fn identity_kernel(channels: usize, k: usize) -> Result<Tensor> {
    if k % 2 == 0 {
        return Err(TensorError::EvenKernel { op: "identity_kernel", extent: k });
    }
    let mut t = Tensor::zeros([channels, channels, k, k]);
    let centre = (k / 2) * k + k / 2;
    for c in 0..channels {
        t.data_mut()[(c * channels + c) * k * k + centre] = 1.0;
    }
    Ok(t)
}

/// `alpha * w + (1 - alpha) * I` for a square kernel `w`.
pub fn blend_with_identity(kernel: &Tensor, alpha: f32) -> Result<Tensor> {
    let [co, ci, kh, kw] = kernel.dims4("blend_with_identity")?;
    if co != ci {
        return Err(TensorError::ShapeMismatch {
            op: "blend_with_identity",
            dim: "input channels",
            expected: co,
            got: ci,
        });
    }
    if kh != kw {
        return Err(TensorError::ShapeMismatch {
            op: "blend_with_identity",
            dim: "kernel width",
            expected: kh,
            got: kw,
        });
    }
    let identity = identity_kernel(co, kh)?;
    let keep = 1.0 - alpha;
    let data = kernel.data().iter().zip(identity.data()).map(|(&w, &i)| alpha * w + keep * i).collect();
    Ok(Tensor::from_parts(kernel.shape().to_vec(), data))
}

/// Multiplies every element by `alpha`.
pub fn scale(t: &Tensor, alpha: f32) -> Tensor {
    t.map(|v| alpha * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let w = Tensor::from_fn([2, 2, 3, 3], |i| (i as f32 * 0.37).cos());
        let id = identity_kernel(2, 3).unwrap();
        assert_eq!(blend_with_identity(&w, 0.0).unwrap(), id);
        assert_eq!(blend_with_identity(&w, 1.0).unwrap(), w);
        let two_i = scale(&id, 2.0);
        let half = blend_with_identity(&two_i, 0.5).unwrap();
        assert_eq!(half, scale(&id, 1.5));
    }

    #[test]
    fn identity_kernel_passes_features_through() {
        let x = Tensor::from_fn([1, 3, 4, 5], |i| i as f32 - 7.0);
        let id = identity_kernel(3, 5).unwrap();
        let y = crate::ops::conv2d(&x, &id, &Tensor::zeros([3]), 1, 2).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn non_square_rejected() {
        assert!(blend_with_identity(&Tensor::zeros([2, 3, 3, 3]), 0.5).is_err());
        assert!(identity_kernel(2, 4).is_err());
    }
}
