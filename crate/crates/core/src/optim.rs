//! SGD with classical momentum and L2 weight decay, plus the step schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layer, MlpModel};

fn d_lr() -> f64 {
    0.1
}
fn d_momentum() -> f64 {
    0.9
}
fn d_wd() -> f64 {
    5e-4
}
fn d_period() -> usize {
    25
}
fn d_factor() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "d_lr")]
    pub base_lr: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    #[serde(default = "d_period")]
    pub period: usize,
    /// Multiplicative decay applied every `period` epochs.
    #[serde(default = "d_factor")]
    pub factor: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            base_lr: d_lr(),
            momentum: d_momentum(),
            weight_decay: d_wd(),
            period: d_period(),
            factor: d_factor(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::bad_config("optimizer.base_lr", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::bad_config("optimizer.momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::bad_config("optimizer.weight_decay", "must be >= 0"));
        }
        if self.period == 0 {
            return Err(Error::bad_config("optimizer.period", "must be >= 1"));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::bad_config("optimizer.factor", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.factor.powi((epoch / self.period) as i32)
    }
}

/// `base_lr * 0.5^floor(epoch / 25)`.
pub fn lr_at(epoch: usize, base_lr: f64) -> f64 {
    SgdConfig {
        base_lr,
        ..SgdConfig::default()
    }
    .lr_at(epoch)
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Layer>,
}

impl OptimizerState {
    pub fn new(model: &MlpModel, cfg: &SgdConfig) -> Self {
        Self {
            lr: cfg.base_lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: model.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// `v <- momentum * v - lr * (g + wd * theta)`, `theta <- theta + v`.
    pub fn step(&mut self, model: &mut MlpModel, grads: &[Layer]) {
        let (mu, lr, wd) = (self.momentum, self.lr, self.weight_decay);
        for ((layer, grad), vel) in model.layers.iter_mut().zip(grads).zip(&mut self.velocity) {
            ndarray::Zip::from(&mut layer.weights).and(&grad.weights).and(&mut vel.weights).for_each(|p, &g, v| {
                *v = mu * *v - lr * (g + wd * *p);
                *p += *v;
            });
            ndarray::Zip::from(&mut layer.biases).and(&grad.biases).and(&mut vel.biases).for_each(|p, &g, v| {
                *v = mu * *v - lr * (g + wd * *p);
                *p += *v;
            });
        }
    }
}
