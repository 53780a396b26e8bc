use serde::{Deserialize, Serialize};

/// First-order update rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `x <- x - lr g`.
    #[default]
    Gd,
    /// Heavy-ball momentum.
    Momentum { beta: f64 },
    /// Adam with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Optimizer with its running moments; serializable for resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: u64,
    #[serde(default)]
    pub m: Vec<f64>,
    #[serde(default)]
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn apply(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        assert_eq!(x.len(), g.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Gd => {
                for (xi, gi) in x.iter_mut().zip(g) {
                    *xi -= lr * gi;
                }
            }
            OptimizerKind::Momentum { beta } => {
                self.m.resize(x.len(), 0.0);
                for ((xi, gi), mi) in x.iter_mut().zip(g).zip(&mut self.m) {
                    *mi = beta * *mi + gi;
                    *xi -= lr * *mi;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.m.resize(x.len(), 0.0);
                self.v.resize(x.len(), 0.0);
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (k, (xi, gi)) in x.iter_mut().zip(g).enumerate() {
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * gi;
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * gi * gi;
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    *xi -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimize(kind: OptimizerKind, lr: f64, iters: usize) -> f64 {
        // f(x) = (x0 - 3)^2 + 10 (x1 + 1)^2
        let mut opt = Optimizer::new(kind);
        let mut x = [0.0, 0.0];
        for _ in 0..iters {
            let g = [2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)];
            opt.apply(&mut x, &g, lr);
        }
        (x[0] - 3.0).abs().max((x[1] + 1.0).abs())
    }

    #[test]
    fn all_rules_converge_on_quadratic() {
        assert!(minimize(OptimizerKind::Gd, 0.04, 500) < 1e-8);
        assert!(minimize(OptimizerKind::Momentum { beta: 0.5 }, 0.02, 500) < 1e-8);
        assert!(
            minimize(
                OptimizerKind::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8
                },
                0.05,
                2000
            ) < 1e-3
        );
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut opt = Optimizer::new(OptimizerKind::Gd);
        let mut x = [1.0, 2.0];
        opt.apply(&mut x, &[5.0, -5.0], 0.0);
        assert_eq!(x, [1.0, 2.0]);
    }
}
