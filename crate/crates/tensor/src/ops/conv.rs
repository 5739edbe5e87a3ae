//! 2-D cross-correlation over NCHW tensors.
//!
//! Two forward paths are provided: [`conv2d_direct`], a plain loop nest kept as
//! the reference, and [`conv2d`], which lowers each sample to an im2col matrix and
//! runs a column-blocked matrix product. Both accumulate in the same order per
//! output element up to the blocking, and are tested against each other.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Columns per block in the blocked matrix products. 256 f32 columns keep one
/// row segment at 1 KiB so a 3x3x32 im2col block stays inside L2.
const COL_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        let [n, cin, h, w] = input.dims4(OP)?;
        let [cout, kcin, kh, kw] = kernel.dims4(OP)?;
        if kcin != cin {
            return Err(TensorError::ShapeMismatch { op: OP, dim: "input channels", expected: kcin, got: cin });
        }
        if kh % 2 == 0 {
            return Err(TensorError::EvenKernel { op: OP, extent: kh });
        }
        if kw % 2 == 0 {
            return Err(TensorError::EvenKernel { op: OP, extent: kw });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument { op: OP, reason: "stride must be positive".into() });
        }
        if let Some(bias) = bias {
            if bias.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    dim: "bias length",
                    expected: cout,
                    got: bias.numel(),
                });
            }
        }
        if h + 2 * padding < kh {
            return Err(TensorError::ShapeMismatch { op: OP, dim: "height", expected: kh, got: h + 2 * padding });
        }
        if w + 2 * padding < kw {
            return Err(TensorError::ShapeMismatch { op: OP, dim: "width", expected: kw, got: w + 2 * padding });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        Ok(Self { n, cin, h, w, cout, kh, kw, oh, ow, stride, padding })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_sample(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_sample(&self) -> usize {
        self.cout * self.out_plane()
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.oh, self.ow]
    }

    /// Input coordinate for output coordinate `o` and tap `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Lowers one sample (`cin*h*w` values) into a `patch_len x out_plane` matrix.
fn im2col(g: &ConvGeometry, sample: &[f32], cols: &mut [f32]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let chan = &sample[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.source(oy, ky, g.h) {
                        None => out_row.fill(0.0),
                        Some(iy) => {
                            let src = &chan[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                *v = g.source(ox, kx, g.w).map_or(0.0, |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a `patch_len x out_plane` gradient matrix back onto one sample.
fn col2im(g: &ConvGeometry, cols: &[f32], sample: &mut [f32]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let chan = &mut sample[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    let dst = &mut chan[iy * g.w..(iy + 1) * g.w];
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            dst[ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    acc.iter().sum::<f32>() + tail
}

/// Blocked 2-D convolution (im2col + matrix product). `padding` is applied
/// symmetrically with zeros.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, Some(bias), stride, padding)?;
    let plane = g.out_plane();
    let k_len = g.patch_len();
    let mut out = vec![0.0f32; g.n * g.out_sample()];
    let mut cols = vec![0.0f32; k_len * plane];
    let weights = kernel.data();
    for ni in 0..g.n {
        im2col(&g, &input.data()[ni * g.in_sample()..(ni + 1) * g.in_sample()], &mut cols);
        let out_n = &mut out[ni * g.out_sample()..(ni + 1) * g.out_sample()];
        for (co, row) in out_n.chunks_exact_mut(plane).enumerate() {
            row.fill(bias.data()[co]);
        }
        let mut start = 0;
        while start < plane {
            let end = (start + COL_BLOCK).min(plane);
            for co in 0..g.cout {
                let wrow = &weights[co * k_len..(co + 1) * k_len];
                let dst = &mut out_n[co * plane + start..co * plane + end];
                for (k, &wk) in wrow.iter().enumerate() {
                    axpy(wk, &cols[k * plane + start..k * plane + end], dst);
                }
            }
            start = end;
        }
    }
    Ok(Tensor::from_parts(g.out_shape(), out))
}

/// Reference convolution: one loop per index, no lowering.
pub fn conv2d_direct(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, Some(bias), stride, padding)?;
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![0.0f32; g.n * g.out_sample()];
    for ni in 0..g.n {
        for co in 0..g.cout {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..g.cin {
                        for ky in 0..g.kh {
                            let Some(iy) = g.source(oy, ky, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.source(ox, kx, g.w) else {
                                    continue;
                                };
                                acc += wt[((co * g.cin + ci) * g.kh + ky) * g.kw + kx]
                                    * x[((ni * g.cin + ci) * g.h + iy) * g.w + ix];
                            }
                        }
                    }
                    out[((ni * g.cout + co) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(g.out_shape(), out))
}

/// Gradients of a [`conv2d`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor>,
    /// `None` when the caller did not ask for the kernel gradient.
    pub kernel: Option<Tensor>,
    pub bias: Tensor,
}

/// Backward pass of [`conv2d`]. `saved_input` is the forward activation; it is
/// absent when the forward ran without gradient recording, which is an error.
pub fn conv2d_backward(
    grad_out: &Tensor,
    saved_input: Option<&Tensor>,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    want_input_grad: bool,
    want_kernel_grad: bool,
) -> Result<Conv2dGrads> {
    let input = saved_input.ok_or(TensorError::MissingActivation { op: "conv2d" })?;
    let g = ConvGeometry::new(input, kernel, None, stride, padding)?;
    let expected = g.out_shape();
    if grad_out.shape() != expected.as_slice() {
        return Err(TensorError::InvalidArgument {
            op: "conv2d_backward",
            reason: format!("upstream gradient shape {:?}, expected {:?}", grad_out.shape(), expected),
        });
    }
    let plane = g.out_plane();
    let k_len = g.patch_len();
    let weights = kernel.data();
    let mut grad_kernel = want_kernel_grad.then(|| vec![0.0f32; kernel.numel()]);
    let mut grad_bias = vec![0.0f32; g.cout];
    let mut grad_input = want_input_grad.then(|| vec![0.0f32; input.numel()]);
    let mut cols = if want_kernel_grad { vec![0.0f32; k_len * plane] } else { Vec::new() };
    let mut grad_cols = vec![0.0f32; k_len * plane];

    for ni in 0..g.n {
        let gout_n = &grad_out.data()[ni * g.out_sample()..(ni + 1) * g.out_sample()];
        for (co, row) in gout_n.chunks_exact(plane).enumerate() {
            grad_bias[co] += row.iter().sum::<f32>();
        }
        if let Some(grad_kernel) = grad_kernel.as_mut() {
            im2col(&g, &input.data()[ni * g.in_sample()..(ni + 1) * g.in_sample()], &mut cols);
            let mut start = 0;
            while start < plane {
                let end = (start + COL_BLOCK).min(plane);
                for co in 0..g.cout {
                    let grow = &gout_n[co * plane + start..co * plane + end];
                    let gk = &mut grad_kernel[co * k_len..(co + 1) * k_len];
                    for (k, gkv) in gk.iter_mut().enumerate() {
                        *gkv += dot(grow, &cols[k * plane + start..k * plane + end]);
                    }
                }
                start = end;
            }
        }
        if let Some(gi) = grad_input.as_mut() {
            grad_cols.fill(0.0);
            for k in 0..k_len {
                let dst = &mut grad_cols[k * plane..(k + 1) * plane];
                for co in 0..g.cout {
                    let wk = weights[co * k_len + k];
                    if wk != 0.0 {
                        axpy(wk, &gout_n[co * plane..(co + 1) * plane], dst);
                    }
                }
            }
            col2im(&g, &grad_cols, &mut gi[ni * g.in_sample()..(ni + 1) * g.in_sample()]);
        }
    }
    Ok(Conv2dGrads {
        input: grad_input.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        kernel: grad_kernel.map(|d| Tensor::from_parts(kernel.shape().to_vec(), d)),
        bias: Tensor::from_parts(vec![g.cout], grad_bias),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize], scale: f32) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |i| ((i * 37 % 23) as f32 - 11.0) * scale)
    }

    #[test]
    fn scalar_kernel_doubles_input() {
        let x = ramp(&[1, 1, 3, 3], 0.1);
        let k = Tensor::full([1, 1, 1, 1], 2.0);
        let y = conv2d(&x, &k, &Tensor::zeros([1]), 1, 0).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn zero_input_yields_bias() {
        let x = Tensor::zeros([1, 1, 3, 3]);
        let k = ramp(&[1, 1, 3, 3], 0.3);
        let y = conv2d(&x, &k, &Tensor::full([1], 0.5), 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn blocked_matches_direct_across_geometries() {
        for &(stride, padding, k) in &[(1, 0, 1), (1, 1, 3), (2, 1, 3), (1, 2, 5), (1, 3, 7)] {
            let x = ramp(&[2, 3, 9, 11], 0.05);
            let w = ramp(&[4, 3, k, k], 0.02);
            let b = ramp(&[4], 0.1);
            let a = conv2d(&x, &w, &b, stride, padding).unwrap();
            let r = conv2d_direct(&x, &w, &b, stride, padding).unwrap();
            assert_eq!(a.shape(), r.shape());
            assert!(a.max_abs_diff(&r) <= 1e-5, "stride {stride} pad {padding} k {k}");
        }
    }

    #[test]
    fn large_plane_crosses_column_blocks() {
        let x = ramp(&[1, 2, 24, 24], 0.05);
        let w = ramp(&[3, 2, 3, 3], 0.02);
        let b = Tensor::zeros([3]);
        let a = conv2d(&x, &w, &b, 1, 1).unwrap();
        let r = conv2d_direct(&x, &w, &b, 1, 1).unwrap();
        assert!(a.max_abs_diff(&r) <= 1e-5);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        let err = conv2d(&x, &w, &Tensor::zeros([1]), 1, 1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { dim: "input channels", expected: 3, got: 2, .. }));
        let err = conv2d(&Tensor::zeros([1, 3, 4, 4]), &w, &Tensor::zeros([2]), 1, 1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { dim: "bias length", .. }));
    }

    #[test]
    fn even_kernel_rejected() {
        let err =
            conv2d(&Tensor::zeros([1, 1, 4, 4]), &Tensor::zeros([1, 1, 2, 2]), &Tensor::zeros([1]), 1, 0).unwrap_err();
        assert!(matches!(err, TensorError::EvenKernel { extent: 2, .. }));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = ramp(&[1, 2, 5, 5], 0.1);
        let w = ramp(&[3, 2, 3, 3], 0.1);
        let grads = conv2d_backward(&Tensor::zeros([1, 3, 5, 5]), Some(&x), &w, 1, 1, true, true).unwrap();
        assert!(grads.kernel.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
        assert!(grads.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_kernel_grad_is_weighted_input_sum() {
        let x = ramp(&[1, 1, 4, 4], 0.1);
        let up = ramp(&[1, 1, 4, 4], 0.07);
        let w = Tensor::full([1, 1, 1, 1], 1.5);
        let grads = conv2d_backward(&up, Some(&x), &w, 1, 0, false, true).unwrap();
        let expected: f32 = up.data().iter().zip(x.data()).map(|(g, v)| g * v).sum();
        assert!((grads.kernel.unwrap().item() - expected).abs() < 1e-5);
        assert!(grads.input.is_none());
    }

    #[test]
    fn missing_activation_is_an_error() {
        let w = Tensor::zeros([1, 1, 1, 1]);
        let err = conv2d_backward(&Tensor::zeros([1, 1, 2, 2]), None, &w, 1, 0, true, true).unwrap_err();
        assert_eq!(err, TensorError::MissingActivation { op: "conv2d" });
    }
}
