//! SGD with momentum, weight decay, and elementwise gradient clipping.
//!
//! One step, for every parameter `θ` with clipped gradient `g`:
//!
//! ```text
//! g' = g + weight_decay · θ
//! v  = momentum · v + g'
//! θ  = θ − learning_rate · v
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_bound: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            clip_bound: 0.01,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.clip_bound.is_finite() && self.clip_bound > 0.0) {
            return Err(Error::Config(format!(
                "clip bound must be positive, got {}",
                self.clip_bound
            )));
        }
        Ok(())
    }
}

/// Per-parameter velocities plus the step hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub velocities: Vec<Tensor>,
}

impl OptimizerState {
    /// Zero velocities shaped like `params`.
    pub fn new(config: SgdConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            velocities: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }
}

/// Clamp every element to `[-bound, bound]`.
pub fn clip_gradients(grads: &mut [Vec<Real>], bound: Real) {
    for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
        *g = g.clamp(-bound, bound);
    }
}

/// Apply one momentum step in place. `grads[i]` must already be clipped.
pub fn sgd_step(params: &mut [Tensor], grads: &[Vec<Real>], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(Error::dim(
            "sgd_step",
            &[params.len(), grads.len()],
            &[state.velocities.len()],
        ));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocities) {
        if p.len() != g.len() || p.shape() != v.shape() {
            return Err(Error::dim("sgd_step", p.shape(), v.shape()));
        }
    }
    let lr = state.config.learning_rate as Real;
    let momentum = state.config.momentum as Real;
    let wd = state.config.weight_decay as Real;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocities.iter_mut()) {
        for ((theta, &grad), vel) in p.data_mut().iter_mut().zip(g).zip(v.data_mut()) {
            let decayed = grad + wd * *theta;
            *vel = momentum * *vel + decayed;
            *theta -= lr * *vel;
        }
    }
    Ok(())
}
