use serde::{Deserialize, Serialize};

use super::{train_adapt, AdaptHyper, AdaptModule, AdaptReport, AdaptSample, HistoryWindow};
use crate::dynlearn::{DynModel, LatentDynamics};
use crate::envs::{ConfigMode, Env, EpisodeLog};
use crate::error::ensure;
use crate::policy::{rollout, Policy, RolloutSpec};
use crate::safeguard::{LatentSource, SafeDpaRuntime, SafeFilter};
use crate::Result;

/// Samples of one logged episode: for every step `t ≥ k`, the window of the
/// `k` preceding state-action pairs and the encoder's latent of `e_{t−1}`.
/// An episode of `T` steps gives `T − k` samples.
pub fn samples_from_log(log: &EpisodeLog, encoder: &dyn LatentDynamics, k: usize, angle_dims: &[usize]) -> Result<Vec<AdaptSample>> {
    let Some(first) = log.steps.first() else { return Ok(vec![]) };
    let (n, m) = (first.x.len(), first.a_safe.len());
    let mut w = HistoryWindow::new(n, m, k, angle_dims.to_vec());
    let mut out = Vec::with_capacity(log.steps.len().saturating_sub(k));
    for (t, s) in log.steps.iter().enumerate() {
        if t >= k {
            out.push(AdaptSample { window: w.to_matrix(), filled: k, z_target: encoder.latent(&log.steps[t - 1].e)? });
        }
        w.push(&s.x, &s.a_safe)?;
    }
    Ok(out)
}

/// Rolls out `rt` with one configuration per episode and turns the logs
/// into adaptation samples labelled by `rt.model`'s encoder.
pub fn collect_adapt(rt: &SafeDpaRuntime<'_>, k: usize, episodes: usize, seed: u64) -> Result<Vec<AdaptSample>> {
    ensure!(k >= 1, Config, "history length must be positive");
    let spec = RolloutSpec::new(ConfigMode::PerEpisodeRandom, episodes, seed);
    let logs = rollout(rt, &spec)?;
    let ang = rt.env.angle_dims();
    let parts = crate::par::par_map(&logs, |l| samples_from_log(l, rt.model, k, &ang));
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaggerSpec {
    /// Collect-train rounds. Round 0 runs with the oracle latent; later
    /// rounds run with the current adaptation module in the loop.
    pub rounds: usize,
    pub episodes_per_round: usize,
    pub seed: u64,
}

impl Default for DaggerSpec {
    fn default() -> Self {
        Self { rounds: 2, episodes_per_round: 100, seed: 0 }
    }
}

/// Iterated collection and training of the adaptation module. Data from
/// all rounds is aggregated; `phi` is warm-started each round.
pub fn train_adapt_dagger(
    env: &Env,
    policy: &Policy,
    model: &DynModel,
    filter: Option<&SafeFilter>,
    phi: &mut AdaptModule,
    hyper: &AdaptHyper,
    spec: &DaggerSpec,
) -> Result<(Vec<AdaptSample>, Vec<AdaptReport>)> {
    ensure!(spec.rounds >= 1 && spec.episodes_per_round >= 1, Config, "DAgger needs at least one round and episode");
    let mut data = Vec::new();
    let mut reports = Vec::new();
    for round in 0..spec.rounds {
        let snapshot = phi.clone();
        let latent = if round == 0 { LatentSource::Oracle } else { LatentSource::Adapt(&snapshot) };
        let rt = SafeDpaRuntime { env, policy, model, latent, filter };
        let seed = crate::rng::derive(spec.seed, "dagger", round as u64);
        data.extend(collect_adapt(&rt, phi.k, spec.episodes_per_round, seed)?);
        let h = AdaptHyper { seed: crate::rng::derive(hyper.seed, "dagger-train", round as u64), ..hyper.clone() };
        let rep = train_adapt(&data, phi, &h)?;
        log::info!("adapt round {round}: {} samples, held-out mse {:.4e}", data.len(), rep.heldout_mse);
        reports.push(rep);
    }
    Ok((data, reports))
}
