//! Adam optimizer over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update, in place. A non-finite gradient is
/// rejected before any state changes.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState, cfg: &AdamConfig) -> Result<()> {
    ensure!(
        theta.len() == grad.len() && grad.len() == state.m.len() && state.m.len() == state.v.len(),
        Contract,
        "adam_step lengths: theta {}, grad {}, state {}",
        theta.len(),
        grad.len(),
        state.m.len()
    );
    ensure!(grad.iter().all(|g| g.is_finite()), Numeric, "non-finite gradient");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        theta[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}
