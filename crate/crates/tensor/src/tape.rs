//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] lives for one training step. Every operation appends a node that
//! owns its output value and remembers its inputs; [`Tape::backward`] walks the
//! nodes in reverse creation order, which is a valid topological order.

use crate::error::{Result, TensorError};
use crate::graph::Graph;
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Produced while recording was disabled; cannot be differentiated through.
    Untracked(&'static str),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2 {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    DepthToSpace {
        x: Var,
        r: usize,
    },
    Blend {
        w: Var,
        alpha: f32,
    },
    Scale {
        x: Var,
        alpha: f32,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    params: Vec<(String, Var)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true, params: Vec::new() }
    }

    /// A tape that computes values but keeps no backward information.
    pub fn without_grad() -> Self {
        Self { record: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable parameters registered through [`Graph::param`], in order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, requires_grad, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record_op(&mut self, value: Tensor, inputs: &[Var], name: &'static str, op: Op) -> Var {
        let requires_grad = self.needs(inputs);
        if self.record {
            self.push(value, requires_grad, op)
        } else {
            self.push(value, requires_grad, Op::Untracked(name))
        }
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let value = ops::l1_loss(&self.nodes[pred.0].value, &self.nodes[target.0].value)?;
        Ok(self.record_op(value, &[pred, target], "l1_loss", Op::L1 { pred, target }))
    }

    /// `sum_i weights[i] * x[i]`, accumulated in f64. Used to project a tensor
    /// output onto a scalar for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        crate::tensor::ensure_same_shape("weighted_sum", xv, weights)?;
        let s: f64 = xv.data().iter().zip(weights.data()).map(|(&a, &w)| f64::from(a) * f64::from(w)).sum();
        let weights = weights.clone();
        Ok(self.record_op(Tensor::scalar(s as f32), &[x], "weighted_sum", Op::WeightedSum { x, weights }))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: loss_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(upstream);
                    continue;
                }
                Op::Untracked(op) => return Err(TensorError::MissingActivation { op }),
                Op::Conv2d { x, w, b, stride, padding } => {
                    let g = ops::conv2d_backward(
                        &upstream,
                        Some(&self.nodes[x.0].value),
                        &self.nodes[w.0].value,
                        *stride,
                        *padding,
                        wants(*x),
                        wants(*w),
                    )?;
                    if let Some(gi) = g.input {
                        accumulate(&mut grads, *x, gi);
                    }
                    if let Some(gk) = g.kernel {
                        accumulate(&mut grads, *w, gk);
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.bias);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let g = ops::leaky_relu_backward(&upstream, &self.nodes[x.0].value, *slope);
                    accumulate(&mut grads, *x, g);
                }
                Op::MaxPool2 { x, argmax } => {
                    let g = ops::max_pool2_backward(&upstream, argmax, self.nodes[x.0].value.shape());
                    accumulate(&mut grads, *x, g);
                }
                Op::Upsample2 { x } => {
                    accumulate(&mut grads, *x, ops::upsample2_backward(&upstream)?);
                }
                Op::Concat { xs } => {
                    let channels: Vec<usize> = xs.iter().map(|v| self.nodes[v.0].value.shape()[1]).collect();
                    for (v, g) in xs.iter().zip(ops::split_channels(&upstream, &channels)?) {
                        if wants(*v) {
                            accumulate(&mut grads, *v, g);
                        }
                    }
                }
                Op::DepthToSpace { x, r } => {
                    accumulate(&mut grads, *x, ops::space_to_depth(&upstream, *r)?);
                }
                Op::Blend { w, alpha } | Op::Scale { x: w, alpha } => {
                    accumulate(&mut grads, *w, ops::scale(&upstream, *alpha));
                }
                Op::L1 { pred, target } => {
                    let up = upstream.item();
                    let (p, t) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
                    if wants(*pred) {
                        accumulate(&mut grads, *pred, ops::l1_loss_backward(up, p, t));
                    }
                    if wants(*target) {
                        accumulate(&mut grads, *target, ops::l1_loss_backward(-up, p, t));
                    }
                }
                Op::WeightedSum { x, weights } => {
                    accumulate(&mut grads, *x, ops::scale(weights, upstream.item()));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl Graph for Tape {
    type Value = Var;

    fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn param(&mut self, name: &str, t: &Tensor, trainable: bool) -> Var {
        let v = self.leaf(t.clone(), trainable);
        if trainable {
            self.params.push((name.to_string(), v));
        }
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, padding: usize) -> Result<Var> {
        let value =
            ops::conv2d(&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value, stride, padding)?;
        let op = Op::Conv2d { x: *x, w: *w, b: *b, stride, padding };
        Ok(self.record_op(value, &[*x, *w, *b], "conv2d", op))
    }

    fn leaky_relu(&mut self, x: &Var, slope: f32) -> Result<Var> {
        let value = ops::leaky_relu(&self.nodes[x.0].value, slope)?;
        Ok(self.record_op(value, &[*x], "leaky_relu", Op::LeakyRelu { x: *x, slope }))
    }

    fn max_pool2(&mut self, x: &Var) -> Result<Var> {
        let (value, argmax) = ops::max_pool2(&self.nodes[x.0].value)?;
        Ok(self.record_op(value, &[*x], "max_pool2", Op::MaxPool2 { x: *x, argmax }))
    }

    fn upsample2(&mut self, x: &Var) -> Result<Var> {
        let value = ops::upsample2(&self.nodes[x.0].value)?;
        Ok(self.record_op(value, &[*x], "upsample2", Op::Upsample2 { x: *x }))
    }

    fn concat_channels(&mut self, xs: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor> = xs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = ops::concat_channels(&values)?;
        let xs: Vec<Var> = xs.iter().map(|v| **v).collect();
        Ok(self.record_op(value, &xs, "concat_channels", Op::Concat { xs: xs.clone() }))
    }

    fn depth_to_space(&mut self, x: &Var, r: usize) -> Result<Var> {
        let value = ops::depth_to_space(&self.nodes[x.0].value, r)?;
        Ok(self.record_op(value, &[*x], "depth_to_space", Op::DepthToSpace { x: *x, r }))
    }

    fn blend_with_identity(&mut self, w: &Var, alpha: f32) -> Result<Var> {
        let value = ops::blend_with_identity(&self.nodes[w.0].value, alpha)?;
        Ok(self.record_op(value, &[*w], "blend_with_identity", Op::Blend { w: *w, alpha }))
    }

    fn scale(&mut self, x: &Var, alpha: f32) -> Result<Var> {
        let value = ops::scale(&self.nodes[x.0].value, alpha);
        Ok(self.record_op(value, &[*x], "scale", Op::Scale { x: *x, alpha }))
    }
}
