use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// One parameter handed to [`Adam::step`].
pub struct ParamUpdate<'a> {
    pub name: &'a str,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
}

/// Bias-corrected Adam. Moment buffers are keyed by parameter name and created
/// on first sight.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    /// First and second moment buffers for `name`, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Applies one update to every parameter. Validation happens before any
    /// parameter is touched, so a bad gradient leaves the whole set unchanged.
    pub fn step(&mut self, params: &mut [ParamUpdate<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.grad.shape() != p.value.shape() {
                return Err(TensorError::InvalidArgument {
                    op: "adam_step",
                    reason: format!(
                        "gradient shape {:?} does not match parameter `{}` {:?}",
                        p.grad.shape(),
                        p.name,
                        p.value.shape()
                    ),
                });
            }
            if !p.grad.all_finite() {
                return Err(TensorError::NonFiniteGradient { name: p.name.to_string() });
            }
            if let Some((m, _)) = self.moments.get(p.name) {
                if m.shape() != p.value.shape() {
                    return Err(TensorError::InvalidArgument {
                        op: "adam_step",
                        reason: format!("moment buffer shape changed for `{}`", p.name),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let (m, v) = self
                .moments
                .entry(p.name.to_string())
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for (((w, &g), mi), vi) in
                p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
