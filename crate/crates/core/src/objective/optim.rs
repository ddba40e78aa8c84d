//! AdamW with per-group learning-rate multipliers, and the cosine schedule.

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Learning-rate multiplier applied to [`ParamGroup::Temporal`] tensors.
    pub temporal_lr_mult: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            temporal_lr_mult: 2.0,
        }
    }
}

impl AdamWConfig {
    pub fn group_mult(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Base => 1.0,
            ParamGroup::Temporal => self.temporal_lr_mult,
        }
    }
}

/// Moment accumulators, one pair of buffers per tensor in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam step at learning rate `lr` (scaled per group):
///
/// `p ← p - lr_g · (m̂ / (sqrt(v̂) + eps) + wd · p)`
pub fn adamw_step<T: Scalar, P: ParamSet<T>>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    let grads = grads.params();
    let mut params = params.params_mut();
    if params.len() != grads.len() {
        return Err(Error::dim("adamw_step tensors", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(&grads) {
        if p.shape != g.shape {
            return Err(Error::dim(
                "adamw_step tensor shape",
                format!("{} {:?}", p.name, p.shape),
                format!("{:?}", g.shape),
            ));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state.first.iter().zip(&params).any(|(m, p)| m.len() != p.data.len())
    {
        return Err(Error::dim("adamw_step moments", state.first.len(), params.len()));
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let eps = T::lit(cfg.eps);
    let wd = T::lit(cfg.weight_decay);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(&grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let step = T::lit(lr * cfg.group_mult(p.group));
        for (((x, &gi), mi), vi) in p.data.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= step * (m_hat / (v_hat.sqrt() + eps) + wd * *x);
        }
    }
    Ok(())
}

/// `base · ½(1 + cos(π · step / total))`, with `step` clamped to `total`.
pub fn cosine_lr(step: usize, total: usize, base: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}
