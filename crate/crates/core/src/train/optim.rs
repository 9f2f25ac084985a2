//! AdamW with decoupled weight decay and a one-cycle cosine schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ModelParams, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneCycle {
    pub max_lr: f64,
    /// Fraction of the run spent rising to `max_lr`.
    pub warmup_fraction: f64,
    /// Starting rate is `max_lr / div_factor`.
    pub div_factor: f64,
    /// Final rate is the starting rate divided by this.
    pub final_div_factor: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        OneCycle { max_lr: 3e-3, warmup_fraction: 0.3, div_factor: 25.0, final_div_factor: 1e4 }
    }
}

impl OneCycle {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0) || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("one-cycle needs max_lr > 0 and warmup_fraction in [0, 1]".into()));
        }
        if !(self.div_factor >= 1.0) || !(self.final_div_factor >= 1.0) {
            return Err(Error::Config("one-cycle divisors must be at least 1".into()));
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.initial_lr() / self.final_div_factor
    }

    /// Step index at which the rate peaks.
    pub fn peak_step(&self, total_steps: usize) -> usize {
        let last = total_steps.saturating_sub(1);
        ((self.warmup_fraction * last as f64).round() as usize).min(last)
    }

    /// Learning rate at 0-based `step` of `total_steps`.
    pub fn lr(&self, step: usize, total_steps: usize) -> f64 {
        let peak = self.peak_step(total_steps);
        let last = total_steps.saturating_sub(1);
        let cos_mix = |from: f64, to: f64, t: f64| to + (from - to) * (1.0 + (PI * t).cos()) / 2.0;
        if step <= peak {
            if peak == 0 {
                return self.max_lr;
            }
            cos_mix(self.initial_lr(), self.max_lr, step as f64 / peak as f64)
        } else {
            let span = (last - peak).max(1) as f64;
            let t = ((step - peak) as f64 / span).min(1.0);
            cos_mix(self.max_lr, self.final_lr(), t)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.12 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub config: AdamWConfig,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: u64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig, params: &ModelParams<S>) -> Self {
        let zeros: Vec<Tensor<S>> = params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        AdamW { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams<S>, grads: &Gradients<S>, lr: f64) -> Result<()> {
        if !grads.is_congruent(params) {
            return Err(Error::shape("gradients are not congruent with parameters"));
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let (one, eps) = (S::one(), S::of(c.eps));
        let step_size = S::of(lr / bc1);
        let decay = S::of(1.0 - lr * c.weight_decay);
        let inv_bc2 = S::of(1.0 / bc2);
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * gi;
                v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
                let denom = (v.data[i] * inv_bc2).sqrt() + eps;
                p.data[i] = p.data[i] * decay - step_size * m.data[i] / denom;
            }
        }
        Ok(())
    }
}
