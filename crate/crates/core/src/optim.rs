//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    PlainGradient,
    #[default]
    AdaptiveMoments,
}

/// Gradient descent with either a fixed step or Adam moment estimates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let moments = if kind == OptimizerKind::AdaptiveMoments { len } else { 0 };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn adam(lr: f64, len: usize) -> Self {
        Self::new(OptimizerKind::AdaptiveMoments, lr, len)
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// In-place descent step: `params -= update(grad)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        match self.kind {
            OptimizerKind::PlainGradient => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::AdaptiveMoments => {
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t);
                let bc2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / bc1;
                    let vh = self.v[i] / bc2;
                    params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_kinds_minimize_a_quadratic() {
        for kind in [OptimizerKind::PlainGradient, OptimizerKind::AdaptiveMoments] {
            let mut x = vec![3.0, -2.0];
            let mut opt = Optimizer::new(kind, 0.05, 2);
            for _ in 0..2000 {
                let g: Vec<f64> = x.iter().map(|v| 2.0 * (v - 1.0)).collect();
                opt.step(&mut x, &g);
            }
            assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3), "{kind:?}: {x:?}");
        }
    }
}
