//! AdamW with decoupled weight decay and a fixed learning rate.
//!
//! ```text
//! m     = b1 m + (1 - b1) g
//! v     = b2 v + (1 - b2) g^2
//! theta = theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
//! ```
//!
//! Weight decay applies to the embedding and weight matrices, not to biases.

use ndarray::Zip;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{KvError, KvMap};
use crate::tagger::{Gradients, ModelParams, ParamSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("non-finite gradient; step skipped")]
    NonFiniteGradient,
    #[error("optimizer state does not match the parameter shapes")]
    ShapeMismatch,
    #[error("invalid optimizer config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptimError::Config(format!("{self:?}")))
        }
    }

    pub(crate) fn read_kv(&mut self, kv: &KvMap) -> Result<(), KvError> {
        kv.read("lr", &mut self.lr)?;
        kv.read("beta1", &mut self.beta1)?;
        kv.read("beta2", &mut self.beta2)?;
        kv.read("adam_eps", &mut self.eps)?;
        kv.read("weight_decay", &mut self.weight_decay)?;
        Ok(())
    }

    pub(crate) fn write_kv(&self, kv: &mut KvMap) {
        kv.set("lr", self.lr);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("adam_eps", self.eps);
        kv.set("weight_decay", self.weight_decay);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

pub fn init_state(params: &ModelParams) -> OptimState {
    OptimState {
        m: params.values.zeros_like(),
        v: params.values.zeros_like(),
        t: 0,
    }
}

/// One AdamW update. Parameters are left untouched when the gradient has a
/// non-finite entry.
pub fn step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimState,
    cfg: &OptimConfig,
) -> Result<(), OptimError> {
    if !grads.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    if !params.values.same_shape(grads)
        || !params.values.same_shape(&state.m)
        || !params.values.same_shape(&state.v)
    {
        return Err(OptimError::ShapeMismatch);
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);

    let tensors = params
        .values_mut()
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (i, (((theta, g), m), v)) in tensors.enumerate() {
        let wd = if ParamSet::is_bias(i) {
            0.0
        } else {
            cfg.weight_decay
        };
        Zip::from(theta)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|theta, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps) + lr * wd * *theta;
            });
    }
    Ok(())
}
