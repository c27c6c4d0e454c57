//! The assembled deployment loop: latent estimate, policy action, filter.

use serde::{Deserialize, Serialize};

use super::{solve_cbf_qp_multi, ErrorBounds, FilterResult};
use crate::adapt::{AdaptModule, HistoryWindow};
use crate::dynlearn::LatentDynamics;
use crate::envs::Env;
use crate::error::ensure;
use crate::policy::Policy;
use crate::rng::Rng;
use crate::Result;

/// Where the latent fed to the model and policy comes from.
#[derive(Clone, Copy, Debug)]
pub enum LatentSource<'a> {
    /// The encoder applied to the true configuration, `z = μ(e)`.
    Oracle,
    /// The adaptation module on the history window, `ẑ = φ(window)`.
    Adapt(&'a AdaptModule),
    /// A constant latent (non-adaptive baselines).
    Fixed(&'a [f64]),
    Zero,
}

/// Filter settings. The margin of a barrier with normal `p` is
/// `eps_unit · ‖p‖∞`, multiplied by `cold_start_factor` while the
/// adaptation window is still filling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafeFilter {
    pub eps_unit: f64,
    pub eta: f64,
    pub cold_start_factor: f64,
    pub max_rounds: usize,
}

impl Default for SafeFilter {
    fn default() -> Self {
        Self { eps_unit: 0.0, eta: 0.1, cold_start_factor: 2.0, max_rounds: 10 }
    }
}

impl SafeFilter {
    pub fn from_bounds(bounds: &ErrorBounds, eta: f64) -> Self {
        Self { eps_unit: bounds.unit_margin(), eta, ..Self::default() }
    }
}

/// Everything chosen at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub z: Vec<f64>,
    pub a_raw: Vec<f64>,
    pub result: FilterResult,
    /// Margin applied to each barrier.
    pub eps: Vec<f64>,
    pub cold: bool,
}

/// A policy, a latent-conditioned model, a latent source and an optional filter.
#[derive(Clone, Copy)]
pub struct SafeDpaRuntime<'a> {
    pub env: &'a Env,
    pub policy: &'a Policy,
    pub model: &'a dyn LatentDynamics,
    pub latent: LatentSource<'a>,
    pub filter: Option<&'a SafeFilter>,
}

impl<'a> SafeDpaRuntime<'a> {
    pub fn window(&self) -> HistoryWindow {
        match self.latent {
            LatentSource::Adapt(phi) => phi.empty_window(),
            _ => {
                let d = self.env.dims();
                HistoryWindow::new(d.n, d.m, 1, self.env.angle_dims())
            }
        }
    }

    /// `(z, cold)`; `cold` is set while an adaptation window is not full.
    pub fn latent(&self, e: &[f64], window: &HistoryWindow) -> Result<(Vec<f64>, bool)> {
        Ok(match self.latent {
            LatentSource::Oracle => (self.model.latent(e)?, false),
            LatentSource::Adapt(phi) => (phi.infer_latent(window)?, !window.is_full()),
            LatentSource::Fixed(z) => (z.to_vec(), false),
            LatentSource::Zero => (vec![0.0; self.model.latent_dim()], false),
        })
    }

    /// Filters `a_raw` at state `x` under latent `z`. Pure.
    pub fn filter_raw(&self, x: &[f64], z: &[f64], a_raw: &[f64], cold: bool) -> Result<(FilterResult, Vec<f64>)> {
        let space = &self.policy.space;
        let Some(filter) = self.filter else {
            let a = space.clip(a_raw);
            return Ok((
                FilterResult { a_safe: a, status: super::FilterStatus::Inactive, lambda: vec![], h_pred: vec![] },
                vec![],
            ));
        };
        ensure!(filter.eps_unit >= 0.0 && filter.eps_unit.is_finite(), Contract, "invalid margin {}", filter.eps_unit);
        let bars = self.env.filter_barriers(x, filter.eta);
        let factor = if cold { filter.cold_start_factor } else { 1.0 };
        let eps: Vec<f64> = bars.iter().map(|b| factor * filter.eps_unit * b.p_inf()).collect();
        let h_now: Vec<f64> = bars.iter().map(|b| b.value(x)).collect();
        let pred = self.model.predict(x, z)?;
        let res = solve_cbf_qp_multi(a_raw, &pred, &bars, &eps, &h_now, space, filter.max_rounds)?;
        if res.status == super::FilterStatus::InfeasibleFallback {
            log::trace!("filter infeasible at x = {x:?}");
        }
        Ok((res, eps))
    }

    /// Latent estimate, policy action and filtered action at state `x`.
    /// `e` is read only by the oracle latent source.
    pub fn filter_action(&self, x: &[f64], e: &[f64], window: &HistoryWindow, rng: &mut Rng) -> Result<Decision> {
        let (z, cold) = self.latent(e, window)?;
        let a_raw = self.policy.act(x, Some(&z), Some(self.model), rng)?;
        let (result, eps) = self.filter_raw(x, &z, &a_raw, cold)?;
        Ok(Decision { z, a_raw, result, eps, cold })
    }
}
