//! Gradient clipping, learning-rate schedule and parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neural::lstm::LstmParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub hidden: usize,
    pub learning_rate: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_period: usize,
    pub weight_decay: f64,
    pub gradient_threshold: f64,
    pub minibatch: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            hidden: 16,
            learning_rate: 0.01,
            lr_drop_factor: 0.1,
            lr_drop_period: 25,
            weight_decay: 0.0,
            gradient_threshold: 1.0,
            minibatch: 1000,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(invalid("lr_drop_factor must lie in (0, 1]"));
        }
        if self.lr_drop_period == 0 {
            return Err(invalid("lr_drop_period must be at least 1"));
        }
        if !(self.gradient_threshold > 0.0) {
            return Err(invalid("gradient_threshold must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay must be non-negative"));
        }
        if self.minibatch == 0 || self.hidden == 0 || self.max_epochs == 0 {
            return Err(invalid("minibatch, hidden and max_epochs must be at least 1"));
        }
        Ok(())
    }

    /// `alpha * drop^floor(epoch / period)`, epochs counted from zero.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_drop_factor.powi((epoch / self.lr_drop_period) as i32)
    }
}

/// Mutable optimizer bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub step: u64,
    pub epoch: usize,
    pub learning_rate: f64,
    pub m: LstmParams,
    pub v: LstmParams,
}

impl TrainingState {
    pub fn new(params: &LstmParams, cfg: &TrainConfig) -> Self {
        let zeros = LstmParams::zeros(params.hidden(), params.input(), params.outputs());
        Self {
            step: 0,
            epoch: 0,
            learning_rate: cfg.learning_rate_at(0),
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Rescale to global L2 norm `threshold` if the norm exceeds it. Returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut LstmParams, threshold: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    norm
}

pub fn optimizer_step(
    params: &mut LstmParams,
    grads: &LstmParams,
    state: &mut TrainingState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(invalid("gradient or optimizer state shape differs from parameters"));
    }
    if grads.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged {
            epoch: state.epoch,
            step: state.step,
            reason: "non-finite gradient".into(),
        });
    }
    state.step += 1;
    let lr = cfg.learning_rate_at(state.epoch);
    state.learning_rate = lr;
    match cfg.optimizer {
        Optimizer::GradientDescent => {
            for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        Optimizer::Adam => {
            let t = state.step as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let m = state.m.slices_mut();
            let v = state.v.slices_mut();
            for (((p, g), m), v) in params.slices_mut().into_iter().zip(grads.slices()).zip(m).zip(v) {
                for j in 0..p.len() {
                    m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                    v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                    let m_hat = m[j] / c1;
                    let v_hat = v[j] / c2;
                    p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
    Ok(())
}
