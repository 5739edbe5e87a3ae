//! Central finite differences for checking analytic gradients.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! every backward kernel it is applied to.

use crate::tensor::Tensor;

/// Numerical gradient of `f` at `at`. The step actually taken is measured from
/// the perturbed f32 values, and differences are formed in f64.
pub fn central_difference(mut f: impl FnMut(&Tensor) -> f64, at: &Tensor, h: f32) -> Tensor {
    let mut probe = at.clone();
    let mut out = Vec::with_capacity(at.numel());
    for i in 0..at.numel() {
        let x0 = at.data()[i];
        let (xp, xm) = (x0 + h, x0 - h);
        probe.data_mut()[i] = xp;
        let fp = f(&probe);
        probe.data_mut()[i] = xm;
        let fm = f(&probe);
        probe.data_mut()[i] = x0;
        out.push(((fp - fm) / f64::from(xp - xm)) as f32);
    }
    Tensor::new(at.shape().to_vec(), out).expect("same shape")
}

/// Worst element of an analytic-vs-numeric comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)` maximised over elements.
pub fn compare(analytic: &Tensor, numeric: &Tensor, floor: f64) -> GradCheck {
    let mut worst = GradCheck { max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let (a, n) = (f64::from(a), f64::from(n));
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > worst.max_rel_err {
            worst = GradCheck { max_rel_err: rel, worst_index: i, analytic: a, numeric: n };
        }
    }
    worst
}
