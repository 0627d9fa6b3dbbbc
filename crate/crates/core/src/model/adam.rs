use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Moments are updated in `f64`
/// and stored back in the parameter precision.
pub fn adam_step<T: Real>(state: &mut AdamState<T>, params: &mut [T], grads: &[T], cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Model(format!(
            "adam shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Model(format!(
            "non-finite gradient at parameter {i} on step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i].as_f64();
        let m = cfg.beta1 * state.m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        state.m[i] = T::of(m);
        state.v[i] = T::of(v);
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] = T::of(params[i].as_f64() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
    Ok(())
}
