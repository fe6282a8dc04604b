use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autograd::{Real, Tensor};
use crate::model::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_betas")]
    pub betas: [f64; 2],
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// SGD momentum; 0 disables it.
    #[serde(default)]
    pub momentum: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub labelled_batch: usize,
    #[serde(default = "default_batch")]
    pub unlabelled_batch: usize,
}

fn default_betas() -> [f64; 2] {
    [0.9, 0.999]
}

fn default_adam_eps() -> f64 {
    1e-8
}

fn default_batch() -> usize {
    8
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64, epochs: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            betas: default_betas(),
            adam_eps: default_adam_eps(),
            momentum: 0.0,
            epochs,
            labelled_batch: default_batch(),
            unlabelled_batch: default_batch(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: String| Err(HarnessError::Config(s));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.labelled_batch == 0 {
            return bad("labelled_batch must be >= 1".into());
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return bad(format!("betas {:?} must lie in [0, 1)", self.betas));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        Ok(())
    }
}

/// Optimizer state, one slot per parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T> {
    Adam {
        cfg: OptimizerConfig,
        step: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    },
    Sgd {
        cfg: OptimizerConfig,
        velocity: Vec<Tensor<T>>,
    },
}

impl<T: Real> Optimizer<T> {
    pub fn new(cfg: &OptimizerConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        match cfg.kind {
            OptimizerKind::Adam => Optimizer::Adam {
                cfg: cfg.clone(),
                step: 0,
                m: zeros(),
                v: zeros(),
            },
            OptimizerKind::Sgd => Optimizer::Sgd {
                cfg: cfg.clone(),
                velocity: zeros(),
            },
        }
    }

    /// Applies one update from the gradients accumulated in `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        match self {
            Optimizer::Adam { cfg, step, m, v } => {
                *step += 1;
                let [b1, b2] = cfg.betas;
                let lr = cfg.learning_rate;
                let c1 = 1.0 - b1.powi(*step as i32);
                let c2 = 1.0 - b2.powi(*step as i32);
                let (b1, b2, eps) = (T::of(b1), T::of(b2), T::of(cfg.adam_eps));
                let step_size = T::of(lr / c1);
                let c2 = T::of(c2);
                for ((p, m), v) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    let g = p.grad.data();
                    for (((x, &gi), mi), vi) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(g)
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        *x -= step_size * *mi / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
            Optimizer::Sgd { cfg, velocity } => {
                let (lr, mu) = (T::of(cfg.learning_rate), T::of(cfg.momentum));
                for (p, vel) in params.iter_mut().zip(velocity.iter_mut()) {
                    let g = p.grad.data();
                    for ((x, &gi), vi) in p.value.data_mut().iter_mut().zip(g).zip(vel.data_mut()) {
                        *vi = mu * *vi + gi;
                        *x -= lr * *vi;
                    }
                }
            }
        }
    }
}
