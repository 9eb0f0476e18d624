use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state; moment vectors are empty for SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        let len = if kind == OptimizerKind::Adam { n } else { 0 };
        Self {
            kind,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One descent step `x <- x - lr * direction(grad)`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (xi, g) in x.iter_mut().zip(grad) {
                    *xi -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..x.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    x[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_has_unit_magnitude() {
        let mut s = OptimizerState::new(OptimizerKind::Adam, 2);
        let mut x = [0.0, 0.0];
        s.step(&mut x, &[3.0, -0.5], 0.1);
        assert!((x[0] + 0.1).abs() < 1e-8 && (x[1] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn both_minimize_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut s = OptimizerState::new(kind, 1);
            let mut x = [5.0];
            for _ in 0..2000 {
                let g = [2.0 * (x[0] - 1.0)];
                s.step(&mut x, &g, 0.05);
            }
            assert!((x[0] - 1.0).abs() < 1e-3, "{kind:?}: {}", x[0]);
        }
    }

    #[test]
    fn zero_learning_rate_is_exact_identity() {
        let mut s = OptimizerState::new(OptimizerKind::Adam, 1);
        let mut x = [0.123_456_789];
        s.step(&mut x, &[7.0], 0.0);
        assert_eq!(x[0], 0.123_456_789);
    }
}
