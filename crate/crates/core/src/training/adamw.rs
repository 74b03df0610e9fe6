use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Moments mirror the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
    pub hyper: AdamWConfig,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &Params<T>, hyper: AdamWConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            hyper,
        }
    }
}

/// One AdamW update at learning rate `lr` (the schedule's current value;
/// the other hyperparameters come from `state`). Weight decay is applied
/// to the parameter directly, separate from the adaptive step. Nothing is
/// modified if any gradient is non-finite.
pub fn adamw_step<T: Real>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut OptimState<T>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::Divergence(name.to_string()));
        }
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::dim("adamw_step", p.shape(), g.shape()));
        }
    }
    let h = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = T::lit(h.beta1 * mi.as_f64() + (1.0 - h.beta1) * gi.as_f64());
        }
        let v = state.v.get_mut(name)?;
        for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
            let gi = gi.as_f64();
            *vi = T::lit(h.beta2 * vi.as_f64() + (1.0 - h.beta2) * gi * gi);
        }
        let (m, v) = (state.m.get(name)?, state.v.get(name)?);
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let mut x = pi.as_f64();
            x -= lr * h.weight_decay * x;
            let m_hat = mi.as_f64() / bc1;
            let v_hat = vi.as_f64() / bc2;
            x -= lr * m_hat / (v_hat.sqrt() + h.eps);
            *pi = T::lit(x);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, g)| g.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// Cosine decay from `base` at step 0 to zero at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (step.min(total) as f64) / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
}
