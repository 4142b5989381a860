//! Optimizer state and update rules.
//!
//! Weight decay means two different things here, on purpose: sgd_momentum
//! folds it into the gradient as a classical L2 term, while adamw applies
//! it as a decoupled multiplicative shrink before the adaptive update, so
//! decay strength does not get renormalized by the second-moment estimate.

use crate::dynamics::{GradSet, OptimKind, OptimizerConfig, Schedule};
use crate::error::{Error, Result};
use crate::views::ParamSet;

#[derive(Clone, Debug)]
pub enum OptState {
    SgdMomentum {
        velocity: Vec<Vec<f64>>,
    },
    Adamw {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: u64,
    },
}

impl OptState {
    pub fn new(cfg: &OptimizerConfig, params: &ParamSet) -> OptState {
        let zeros: Vec<Vec<f64>> = params
            .tensors
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        match cfg.kind {
            OptimKind::SgdMomentum => OptState::SgdMomentum { velocity: zeros },
            OptimKind::Adamw => OptState::Adamw {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
        }
    }

    /// One update with the given effective learning rate.
    pub fn step(
        &mut self,
        cfg: &OptimizerConfig,
        lr: f64,
        params: &mut ParamSet,
        grads: &GradSet,
    ) -> Result<()> {
        if grads.by_tensor.len() != params.tensors.len() {
            return Err(Error::ShapeMismatch {
                context: "gradients vs params".into(),
                expected: format!("{} tensors", params.tensors.len()),
                got: format!("{}", grads.by_tensor.len()),
            });
        }
        match self {
            OptState::SgdMomentum { velocity } => {
                for ((tensor, vel), g) in params
                    .tensors
                    .iter_mut()
                    .zip(velocity.iter_mut())
                    .zip(grads.by_tensor.iter())
                {
                    for i in 0..tensor.data.len() {
                        let g_eff = g[i] + cfg.weight_decay * tensor.data[i];
                        vel[i] = cfg.momentum * vel[i] + g_eff;
                        tensor.data[i] -= lr * vel[i];
                    }
                }
            }
            OptState::Adamw { m, v, t } => {
                *t += 1;
                let (b1, b2) = cfg.betas;
                let bias1 = 1.0 - b1.powi(*t as i32);
                let bias2 = 1.0 - b2.powi(*t as i32);
                let shrink = 1.0 - lr * cfg.weight_decay;
                for ((tensor, (m_t, v_t)), g) in params
                    .tensors
                    .iter_mut()
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .zip(grads.by_tensor.iter())
                {
                    for i in 0..tensor.data.len() {
                        tensor.data[i] *= shrink;
                        m_t[i] = b1 * m_t[i] + (1.0 - b1) * g[i];
                        v_t[i] = b2 * v_t[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = m_t[i] / bias1;
                        let v_hat = v_t[i] / bias2;
                        tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Learning rate in force at `step` of a run of `total` steps.
pub fn lr_at(cfg: &OptimizerConfig, step: u64, total: u64) -> f64 {
    match &cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::Cosine => {
            let frac = if total == 0 {
                0.0
            } else {
                step as f64 / total as f64
            };
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
        Schedule::StepDecay { times, factor } => {
            let hits = times.iter().filter(|&&t| t <= step).count() as i32;
            cfg.lr * factor.powi(hits)
        }
    }
}
