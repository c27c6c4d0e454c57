//! REINFORCE with a per-timestep baseline and Gaussian exploration.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyKind};
use crate::dynlearn::LatentDynamics;
use crate::envs::{check_safe, ConfigMode, ConfigSampler, Env};
use crate::error::ensure;
use crate::rng::stream;
use crate::stats::{mean, variance};
use crate::tensor::{adam_step, chunked_grad, AdamConfig, DenseMatrix, OptimizerState};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlHyper {
    pub gamma: f64,
    pub steps_per_update: usize,
    pub total_steps: usize,
    pub lr: f64,
    /// Weight of the Gaussian entropy bonus. The exploration scale follows a
    /// fixed schedule, so the bonus is reported but carries no gradient.
    pub entropy_weight: f64,
    /// Reward penalty per step spent outside the safe set.
    pub beta: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub horizon: usize,
    pub mode: ConfigMode,
    pub chunk: usize,
    pub seed: u64,
}

impl Default for RlHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            steps_per_update: 4000,
            total_steps: 200_000,
            lr: 3e-3,
            entropy_weight: 0.0,
            beta: 0.0,
            sigma_start: 0.5,
            sigma_end: 0.05,
            horizon: 200,
            mode: ConfigMode::PerEpisodeRandom,
            chunk: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgReport {
    /// Mean undiscounted episode return (penalty included) per update.
    pub return_curve: Vec<f64>,
    /// Fraction of episodes with a violation per update.
    pub violation_curve: Vec<f64>,
    pub steps: usize,
}

struct Traj {
    inputs: Vec<Vec<f64>>,
    noise_scaled: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    violated: bool,
}

fn run_episode(env: &Env, policy: &Policy, encoder: &dyn LatentDynamics, h: &RlHyper, sigma: f64, seed_idx: u64) -> Result<Traj> {
    let mut rng = stream(h.seed, "pg-episode", seed_idx);
    let sampler = ConfigSampler::new(env, h.mode, &mut rng);
    let mut s = env.reset(&mut rng);
    let safe = env.safe_set();
    let mut t = Traj { inputs: vec![], noise_scaled: vec![], rewards: vec![], violated: false };
    for step in 0..h.horizon {
        let cfg = sampler.at(step, &mut rng);
        let z = encoder.latent(&cfg.e)?;
        let u = policy.net_input(&s.x, Some(&z));
        let mu = policy.net.as_ref().unwrap().forward(&u)?;
        let sample: Vec<f64> = mu
            .iter()
            .map(|m| {
                let n: f64 = StandardNormal.sample(&mut rng);
                m + sigma * n
            })
            .collect();
        let a = policy.from_scaled(&sample);
        let next = env.step(&s, &a, &cfg)?;
        let (ok, _) = check_safe(&safe, &next.x);
        t.violated |= !ok;
        t.rewards.push(env.reward(&next.x, &a) - if ok { 0.0 } else { h.beta });
        t.inputs.push(u);
        t.noise_scaled.push(sample);
        s = next;
    }
    ensure!(t.rewards.iter().all(|r| r.is_finite()), Numeric, "non-finite reward during policy training");
    Ok(t)
}

/// Trains a neural policy in place. `encoder` supplies `z = μ(e)` and is
/// only read.
pub fn train_pg(env: &Env, policy: &mut Policy, encoder: &dyn LatentDynamics, h: &RlHyper) -> Result<PgReport> {
    ensure!(policy.kind == PolicyKind::Neural && policy.net.is_some(), Contract, "train_pg needs a neural policy");
    ensure!(h.gamma > 0.0 && h.gamma < 1.0, Config, "discount must lie in (0, 1), got {}", h.gamma);
    ensure!(h.beta >= 0.0, Config, "penalty weight must be nonnegative");
    ensure!(h.horizon > 0 && h.steps_per_update > 0 && h.chunk > 0, Config, "empty rollout budget");
    let per_update = h.steps_per_update.div_ceil(h.horizon);
    let updates = (h.total_steps / (per_update * h.horizon)).max(1);
    let cfg = AdamConfig::with_lr(h.lr);
    let mut opt = OptimizerState::new(policy.net.as_ref().unwrap().theta.len());
    let mut report = PgReport { return_curve: vec![], violation_curve: vec![], steps: 0 };
    for up in 0..updates {
        let frac = if updates > 1 { up as f64 / (updates - 1) as f64 } else { 1.0 };
        let sigma = h.sigma_start * (h.sigma_end / h.sigma_start).powf(frac);
        let snapshot = policy.clone();
        let trajs: Vec<Traj> = crate::par::par_map_range(per_update, |i| {
            run_episode(env, &snapshot, encoder, h, sigma, (up * per_update + i) as u64)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let rets: Vec<f64> = trajs.iter().map(|t| t.rewards.iter().sum()).collect();
        let ret = mean(&rets);
        if !ret.is_finite() {
            return Err(Error::Numeric("policy training diverged".into()));
        }
        report.return_curve.push(ret);
        report.violation_curve.push(trajs.iter().filter(|t| t.violated).count() as f64 / trajs.len() as f64);
        report.steps += per_update * h.horizon;
        // Discounted returns-to-go, baseline = mean over episodes at each t.
        let togo: Vec<Vec<f64>> = trajs
            .iter()
            .map(|t| {
                let mut g = vec![0.0; t.rewards.len()];
                let mut acc = 0.0;
                for i in (0..t.rewards.len()).rev() {
                    acc = t.rewards[i] + h.gamma * acc;
                    g[i] = acc;
                }
                g
            })
            .collect();
        let mut items: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(per_update * h.horizon);
        for t in 0..h.horizon {
            let b = mean(&togo.iter().map(|g| g[t]).collect::<Vec<_>>());
            for (tr, g) in trajs.iter().zip(&togo) {
                items.push((tr.inputs[t].clone(), tr.noise_scaled[t].clone(), g[t] - b));
            }
        }
        let adv: Vec<f64> = items.iter().map(|i| i.2).collect();
        let sd = variance(&adv).sqrt().max(1e-8);
        let w = 1.0 / (items.len() as f64 * 2.0 * sigma * sigma);
        let net = snapshot.net.unwrap();
        let (_, g) = chunked_grad(&[&net], &items, h.chunk, |tape, vars, chunk| {
            let u = tape.leaf(DenseMatrix::from_rows(&chunk.iter().map(|c| c.0.clone()).collect::<Vec<_>>())?);
            let s = tape.leaf(DenseMatrix::from_rows(&chunk.iter().map(|c| c.1.clone()).collect::<Vec<_>>())?);
            let a = tape.leaf(DenseMatrix::column(&chunk.iter().map(|c| c.2 / sd).collect::<Vec<_>>()));
            let mu = tape.forward(&vars[0], u)?;
            let d = tape.sub(s, mu)?;
            let sq = tape.square(d);
            let weighted = tape.row_affine(sq, a)?;
            let total = tape.sum(weighted);
            Ok(tape.scale(total, w))
        })?;
        adam_step(&mut policy.net.as_mut().unwrap().theta, &g[0], &mut opt, &cfg)?;
        log::debug!("pg update {up}: return {ret:.3} sigma {sigma:.3}");
    }
    Ok(report)
}
