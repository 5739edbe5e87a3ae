//! Sub-pixel rearrangements between channel depth and spatial resolution.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `out[n, c, y*r + dy, x*r + dx] = in[n, c*r*r + dy*r + dx, y, x]`.
pub fn depth_to_space(input: &Tensor, r: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("depth_to_space")?;
    let rr = r * r;
    if r == 0 || c % rr != 0 {
        return Err(TensorError::ChannelsNotDivisible { channels: c, factor: rr });
    }
    let oc = c / rr;
    let (oh, ow) = (h * r, w * r);
    let x = input.data();
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for co in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * rr + dy * r + dx;
                    let src = &x[((ni * c + ci) * h) * w..((ni * c + ci + 1) * h) * w];
                    let dst_base = (ni * oc + co) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            out[dst_base + (y * r + dy) * ow + xx * r + dx] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oc, oh, ow], out))
}

/// Inverse of [`depth_to_space`].
pub fn space_to_depth(input: &Tensor, r: usize) -> Result<Tensor> {
    const OP: &str = "space_to_depth";
    let [n, c, h, w] = input.dims4(OP)?;
    if r == 0 || h % r != 0 {
        return Err(TensorError::OddExtent { op: OP, dim: "height", extent: h });
    }
    if w % r != 0 {
        return Err(TensorError::OddExtent { op: OP, dim: "width", extent: w });
    }
    let rr = r * r;
    let (ih, iw) = (h / r, w / r);
    let oc = c * rr;
    let x = input.data();
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src_base = (ni * c + ci) * h * w;
            for dy in 0..r {
                for dx in 0..r {
                    let co = ci * rr + dy * r + dx;
                    let dst_base = (ni * oc + co) * ih * iw;
                    for y in 0..ih {
                        for xx in 0..iw {
                            out[dst_base + y * iw + xx] = x[src_base + (y * r + dy) * w + xx * r + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oc, ih, iw], out))
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    const OP: &str = "concat_channels";
    let first = inputs.first().ok_or(TensorError::InvalidArgument { op: OP, reason: "no inputs".into() })?;
    let [n, _, h, w] = first.dims4(OP)?;
    let mut total_c = 0;
    for t in inputs {
        let [tn, tc, th, tw] = t.dims4(OP)?;
        for (dim, expected, got) in [("batch", n, tn), ("height", h, th), ("width", w, tw)] {
            if expected != got {
                return Err(TensorError::ShapeMismatch { op: OP, dim, expected, got });
            }
        }
        total_c += tc;
    }
    let mut out = Vec::with_capacity(n * total_c * h * w);
    for ni in 0..n {
        for t in inputs {
            let per = t.shape()[1] * h * w;
            out.extend_from_slice(&t.data()[ni * per..(ni + 1) * per]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total_c, h, w], out))
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let [n, c, h, w] = grad.dims4("split_channels")?;
    let total: usize = channels.iter().sum();
    if total != c {
        return Err(TensorError::ShapeMismatch { op: "split_channels", dim: "channels", expected: total, got: c });
    }
    let mut parts: Vec<Vec<f32>> = channels.iter().map(|&ci| Vec::with_capacity(n * ci * h * w)).collect();
    let g = grad.data();
    for ni in 0..n {
        let mut offset = ni * c * h * w;
        for (part, &ci) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&g[offset..offset + ci * h * w]);
            offset += ci * h * w;
        }
    }
    Ok(parts.into_iter().zip(channels).map(|(d, &ci)| Tensor::from_parts(vec![n, ci, h, w], d)).collect())
}
