//! Adam with linear warm-up, and the generator's EMA shadow.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Iterations over which the learning rate ramps linearly up to `lr`.
    pub warmup: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.95, eps: 1e-8, warmup: 0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::param("invalid optimizer settings"))
        }
    }

    /// Learning rate applied at (0-based) step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup == 0 || step >= self.warmup {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / self.warmup as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// Applies one update and returns the learning rate used.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [f64], grad: &[f64]) -> Result<f64> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Length { expected: self.m.len(), got: grad.len().min(params.len()) });
        }
        if !math::all_finite(grad) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let lr = cfg.lr_at(self.step);
        self.step += 1;
        let c1 = 1.0 - powi(cfg.beta1, self.step);
        let c2 = 1.0 - powi(cfg.beta2, self.step);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= lr * mh / (math::sqrt(vh) + cfg.eps);
        }
        Ok(lr)
    }
}

fn powi(b: f64, e: u64) -> f64 {
    libm::pow(b, e as f64)
}

pub const EMA_CAP: f64 = 0.9999;

/// `early` before `switch`, then `min(0.9999, (iter + 1) / (iter + 10))`.
pub fn ema_rate(iter: u64, switch: u64, early: f64) -> f64 {
    if iter < switch {
        early
    } else {
        let i = iter as f64;
        ((i + 1.0) / (i + 10.0)).min(EMA_CAP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub shadow: Vec<f64>,
    pub iter: u64,
}

impl EmaState {
    pub fn new(params: &[f64]) -> Self {
        EmaState { shadow: params.to_vec(), iter: 0 }
    }

    /// Folds `params` into the shadow and returns the rate used.
    pub fn update(&mut self, params: &[f64], switch: u64, early: f64) -> Result<f64> {
        if params.len() != self.shadow.len() {
            return Err(Error::Length { expected: self.shadow.len(), got: params.len() });
        }
        let r = ema_rate(self.iter, switch, early);
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = r * *s + (1.0 - r) * p;
        }
        self.iter += 1;
        Ok(r)
    }
}
