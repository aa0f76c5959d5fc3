use crate::config::OptimizerKind;

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, dim: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(AdamState {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: vec![0.0; dim],
                v: vec![0.0; dim],
            }),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(s) => s.lr,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "parameter/gradient length");
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam(s) => {
                assert_eq!(s.m.len(), params.len(), "optimizer state length");
                s.step += 1;
                let t = s.step as i32;
                let c1 = 1.0 - s.beta1.powi(t);
                let c2 = 1.0 - s.beta2.powi(t);
                let step = s.lr * c2.sqrt() / c1;
                for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(s.m.iter_mut().zip(s.v.iter_mut())) {
                    *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                    *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                    *p -= step * *m / (v.sqrt() + s.eps * c2.sqrt());
                }
            }
        }
    }
}

/// Plain descent `θ' = θ − η ĝ`.
pub fn global_step(theta: &[f64], grad_estimate: &[f64], lr: f64) -> Vec<f64> {
    theta.iter().zip(grad_estimate).map(|(t, g)| t - lr * g).collect()
}
