//! First-order update rules for the field coordinates.

use serde::{Deserialize, Serialize};

use crate::exec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    GradientDescent,
    #[default]
    AdaptiveMoment,
}

/// `weight * Σ |p_i|` over the entries flagged in `penalized`, applied through its
/// proximal map (soft thresholding) after the gradient step on the smooth part.
pub struct L1Penalty<'a> {
    pub weight: f64,
    pub penalized: &'a [bool],
}

impl L1Penalty<'_> {
    fn shrink(&self, i: usize, p: f64, step: f64) -> f64 {
        if !self.penalized[i] {
            return p;
        }
        let t = step * self.weight;
        if p > t {
            p - t
        } else if p < -t {
            p + t
        } else {
            0.0
        }
    }
}

pub trait Optimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64], l1: Option<&L1Penalty>);
}

pub struct GradientDescent {
    pub lr: f64,
}

impl Optimizer for GradientDescent {
    fn step(&mut self, params: &mut [f64], grad: &[f64], l1: Option<&L1Penalty>) {
        for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
            *p -= self.lr * g;
            if let Some(l1) = l1 {
                *p = l1.shrink(i, *p, self.lr);
            }
        }
    }
}

/// Adam with bias-corrected first and second moment estimates. With an L1 penalty the
/// shrinkage uses each coordinate's effective step `lr / (sqrt(v) + eps)`.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], l1: Option<&L1Penalty>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        // moments and parameters updated element-wise; order-independent
        let updated = exec::map_indexed(params.len(), |i| {
            let g = grad[i];
            let m = b1 * self.m[i] + (1.0 - b1) * g;
            let v = b2 * self.v[i] + (1.0 - b2) * g * g;
            let rate = lr / ((v / c2).sqrt() + eps);
            let mut p = params[i] - rate * (m / c1);
            if let Some(l1) = l1 {
                p = l1.shrink(i, p, rate);
            }
            (m, v, p)
        });
        for (i, (m, v, p)) in updated.into_iter().enumerate() {
            self.m[i] = m;
            self.v[i] = v;
            params[i] = p;
        }
    }
}

pub fn make_optimizer(kind: OptimizerKind, lr: f64, len: usize) -> Box<dyn Optimizer> {
    match kind {
        OptimizerKind::GradientDescent => Box::new(GradientDescent { lr }),
        OptimizerKind::AdaptiveMoment => Box::new(Adam::new(lr, len)),
    }
}
