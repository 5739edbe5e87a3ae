use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

/// The operator set a network is written against. [`Eager`] evaluates
/// immediately without keeping activations; [`crate::Tape`] records every
/// node for reverse-mode differentiation.
pub trait Graph {
    type Value: Clone;

    /// Non-trainable input data.
    fn input(&mut self, t: Tensor) -> Self::Value;
    /// A named parameter. `trainable = false` keeps it out of the gradient set.
    fn param(&mut self, name: &str, t: &Tensor, trainable: bool) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: &Self::Value,
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;
    fn leaky_relu(&mut self, x: &Self::Value, slope: f32) -> Result<Self::Value>;
    fn max_pool2(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn upsample2(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, xs: &[&Self::Value]) -> Result<Self::Value>;
    fn depth_to_space(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;
    /// `alpha * w + (1 - alpha) * I` for a square kernel.
    fn blend_with_identity(&mut self, w: &Self::Value, alpha: f32) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, alpha: f32) -> Result<Self::Value>;
}

/// Inference-only evaluation: values flow straight through, nothing is saved.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Value = Tensor;

    fn input(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, _name: &str, t: &Tensor, _trainable: bool) -> Tensor {
        t.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        ops::conv2d(x, w, b, stride, padding)
    }

    fn leaky_relu(&mut self, x: &Tensor, slope: f32) -> Result<Tensor> {
        ops::leaky_relu(x, slope)
    }

    fn max_pool2(&mut self, x: &Tensor) -> Result<Tensor> {
        ops::max_pool2(x).map(|(t, _)| t)
    }

    fn upsample2(&mut self, x: &Tensor) -> Result<Tensor> {
        ops::upsample2(x)
    }

    fn concat_channels(&mut self, xs: &[&Tensor]) -> Result<Tensor> {
        ops::concat_channels(xs)
    }

    fn depth_to_space(&mut self, x: &Tensor, r: usize) -> Result<Tensor> {
        ops::depth_to_space(x, r)
    }

    fn blend_with_identity(&mut self, w: &Tensor, alpha: f32) -> Result<Tensor> {
        ops::blend_with_identity(w, alpha)
    }

    fn scale(&mut self, x: &Tensor, alpha: f32) -> Result<Tensor> {
        Ok(ops::scale(x, alpha))
    }
}
