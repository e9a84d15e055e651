use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{EgcError, Result};
use crate::scalar::Real;

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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr >= 0.0 && self.lr.is_finite() && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0) {
            return Err(EgcError::config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<T, P: Params<T> + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Moments are kept in `f64`. Nothing is
/// modified when the gradients are malformed.
pub fn adam_step<T: Real, P: Params<T> + ?Sized>(
    params: &mut P,
    grads: &[Vec<T>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if grads.len() != lens.len() || state.m.len() != lens.len() {
        return Err(EgcError::shape("gradient tensor count", lens.len(), grads.len()));
    }
    for (k, (g, &len)) in grads.iter().zip(&lens).enumerate() {
        if g.len() != len || state.m[k].len() != len {
            return Err(EgcError::shape("gradient tensor length", len, g.len()));
        }
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(EgcError::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.tensors_mut().into_iter().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (idx, w) in p.iter_mut().enumerate() {
            let g = grads[k][idx].to_f64_lossy();
            m[idx] = cfg.beta1 * m[idx] + (1.0 - cfg.beta1) * g;
            v[idx] = cfg.beta2 * v[idx] + (1.0 - cfg.beta2) * g * g;
            let update = cfg.lr * (m[idx] / c1) / ((v[idx] / c2).sqrt() + cfg.eps);
            *w = T::of(w.to_f64_lossy() - update);
        }
    }
    Ok(())
}
