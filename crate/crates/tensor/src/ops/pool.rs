use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, for each output
/// element, the flat input index that won (first maximum in row-major order).
pub fn max_pool2(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    const OP: &str = "max_pool2";
    let [n, c, h, w] = input.dims4(OP)?;
    if h % 2 != 0 {
        return Err(TensorError::OddExtent { op: OP, dim: "height", extent: h });
    }
    if w % 2 != 0 {
        return Err(TensorError::OddExtent { op: OP, dim: "width", extent: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), argmax))
}

/// Routes each pooled gradient to the input position that produced the maximum.
pub fn max_pool2_backward(grad_out: &Tensor, argmax: &[u32], input_shape: &[usize]) -> Tensor {
    let mut grad = vec![0.0f32; input_shape.iter().product()];
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        grad[idx as usize] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), grad)
}

/// Nearest-neighbour x2 upsampling.
pub fn upsample2(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("upsample2")?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    for plane in 0..n * c {
        for y in 0..oh {
            let src = &x[plane * h * w + (y / 2) * w..plane * h * w + (y / 2 + 1) * w];
            let dst = &mut out[plane * oh * ow + y * ow..plane * oh * ow + (y + 1) * ow];
            for (xo, v) in dst.iter_mut().enumerate() {
                *v = src[xo / 2];
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Sums each 2x2 block of the upstream gradient.
pub fn upsample2_backward(grad_out: &Tensor) -> Result<Tensor> {
    const OP: &str = "upsample2_backward";
    let [n, c, oh, ow] = grad_out.dims4(OP)?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(TensorError::OddExtent {
            op: OP,
            dim: if oh % 2 != 0 { "height" } else { "width" },
            extent: if oh % 2 != 0 { oh } else { ow },
        });
    }
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let mut out = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                out[plane * h * w + (y / 2) * w + x / 2] += g[plane * oh * ow + y * ow + x];
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_quad_to_its_max() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::new([1, 1, 1, 1], vec![5.0]).unwrap();
        assert_eq!(upsample2(&x).unwrap().data(), &[5.0; 4]);
    }

    #[test]
    fn pool_after_upsample_is_identity() {
        let x = Tensor::from_fn([2, 3, 3, 5], |i| (i as f32).sin());
        let (y, _) = max_pool2(&upsample2(&x).unwrap()).unwrap();
        assert_eq!(y, x);
        let c = Tensor::full([1, 2, 4, 4], 0.25);
        assert_eq!(upsample2(&max_pool2(&c).unwrap().0).unwrap(), c);
    }

    #[test]
    fn odd_extent_rejected() {
        let err = max_pool2(&Tensor::zeros([1, 1, 3, 4])).unwrap_err();
        assert!(matches!(err, TensorError::OddExtent { dim: "height", extent: 3, .. }));
    }

    #[test]
    fn backward_routes_and_sums() {
        let x = Tensor::new([1, 1, 2, 4], vec![1.0, 9.0, 0.0, 0.0, 3.0, 4.0, 0.0, 7.0]).unwrap();
        let (_, arg) = max_pool2(&x).unwrap();
        let g = Tensor::new([1, 1, 1, 2], vec![2.0, 3.0]).unwrap();
        let gi = max_pool2_backward(&g, &arg, x.shape());
        assert_eq!(gi.data(), &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        let up = upsample2_backward(&Tensor::full([1, 1, 2, 2], 1.5)).unwrap();
        assert_eq!(up.data(), &[6.0]);
    }
}
