use serde::{Deserialize, Serialize};

use super::tape::{GradientTape, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr }
    }
}

/// Optimizer with moment buffers mirroring the model's parameter groups.
/// Groups whose name starts with a frozen prefix are never updated.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    frozen: Vec<String>,
}

impl OptimizerState {
    pub fn new<M: Trainable + ?Sized>(kind: OptimizerKind, model: &M, frozen: &[String]) -> Self {
        let shapes: Vec<usize> = model.param_groups().iter().map(|(_, p)| p.len()).collect();
        let buffers = || shapes.iter().map(|n| vec![0.0; *n]).collect();
        let (first, second) = match kind {
            OptimizerKind::Adam { .. } => (buffers(), buffers()),
            OptimizerKind::Sgd { .. } => (vec![], vec![]),
        };
        Self { kind, step: 0, first, second, frozen: frozen.to_vec() }
    }

    fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    pub fn apply<M: Trainable + ?Sized>(&mut self, model: &mut M, tape: &GradientTape) {
        self.step += 1;
        let frozen: Vec<bool> = tape.groups.iter().map(|(n, _)| self.is_frozen(n)).collect();
        let kind = self.kind;
        let step = self.step as i32;
        for (gi, ((_, params), (_, grad))) in model.param_groups_mut().into_iter().zip(&tape.groups).enumerate() {
            if frozen[gi] {
                continue;
            }
            match kind {
                OptimizerKind::Sgd { lr } => {
                    params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
                }
                OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    let m = &mut self.first[gi];
                    let v = &mut self.second[gi];
                    for i in 0..params.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_defaults() {
        let k: OptimizerKind = serde_json::from_str(r#"{"kind":"adam","lr":0.003}"#).unwrap();
        assert_eq!(k, OptimizerKind::adam(0.003));
        assert!(serde_json::from_str::<OptimizerKind>(r#"{"kind":"sgd","lr":0.1,"momentum":0.9}"#).is_err());
    }
}
