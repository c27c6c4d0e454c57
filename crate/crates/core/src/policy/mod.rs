//! Latent-conditioned control policies `π(x, z)`: uniform random actions,
//! analytic controllers that invert a one-step model, and a neural policy
//! trained with REINFORCE. Episode rollouts live here too.

mod analytic;
mod pg;
mod rollout;

pub use analytic::invert_rows;
pub use pg::{train_pg, PgReport, RlHyper};
pub use rollout::{load_episodes, rollout, save_episodes, RolloutSpec};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynlearn::LatentDynamics;
use crate::envs::{ActionSpace, Env};
use crate::error::ensure;
use crate::io::Checkpoint;
use crate::rng::Rng;
use crate::tensor::{MlpSpec, NetSpec, NetworkParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    AnalyticPendulum,
    AnalyticNav,
    Neural,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub env: Env,
    pub space: ActionSpace,
    /// Neural policies only: maps `[features(x), z]` to the action in units
    /// of the box half-width around its center.
    pub net: Option<NetworkParams>,
    pub conditions_on_latent: bool,
    /// Exploration noise (box half-widths) added by [`Policy::act`] for
    /// neural policies; zero at deployment.
    pub sigma: f64,
}

impl Policy {
    pub fn random(env: &Env) -> Self {
        Self { kind: PolicyKind::Random, env: env.clone(), space: env.action_space(), net: None, conditions_on_latent: false, sigma: 0.0 }
    }

    /// The model-inverting controller for the environment's task.
    pub fn analytic(env: &Env) -> Result<Self> {
        let kind = match env {
            Env::Pendulum(_) => PolicyKind::AnalyticPendulum,
            Env::Planar(_) | Env::Bicycle(_) => PolicyKind::AnalyticNav,
            Env::Linear(_) => return Err(Error::Config("no analytic controller for the linear env".into())),
        };
        Ok(Self { kind, env: env.clone(), space: env.action_space(), net: None, conditions_on_latent: true, sigma: 0.0 })
    }

    /// Observation features: non-angle coordinates, then `(sin, cos)` per angle.
    pub fn features(env: &Env, x: &[f64]) -> Vec<f64> {
        let ang = env.angle_dims();
        let mut out: Vec<f64> = x.iter().enumerate().filter(|(i, _)| !ang.contains(i)).map(|(_, v)| *v).collect();
        for &i in &ang {
            out.push(x[i].sin());
            out.push(x[i].cos());
        }
        out
    }

    pub fn neural(env: &Env, latent_dim: usize, hidden: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        let d = env.dims();
        let input = d.n + env.angle_dims().len() + latent_dim;
        let mut net = NetworkParams::init(NetSpec::Mlp(MlpSpec::new(input, hidden, d.m)), rng)?;
        // Small output layer so the initial mean action sits near the center.
        let last = net.blocks().last().map(|b| b.weight.len() + b.bias.len()).unwrap_or(0);
        let len = net.theta.len();
        net.theta[len - last..].iter_mut().for_each(|v| *v *= 0.01);
        Ok(Self {
            kind: PolicyKind::Neural,
            env: env.clone(),
            space: env.action_space(),
            net: Some(net),
            conditions_on_latent: latent_dim > 0,
            sigma: 0.0,
        })
    }

    pub fn net_input(&self, x: &[f64], z: Option<&[f64]>) -> Vec<f64> {
        let mut u = Self::features(&self.env, x);
        if self.conditions_on_latent {
            u.extend_from_slice(z.unwrap_or(&[]));
        }
        u
    }

    /// Neural mean action in half-width units (unclipped).
    pub fn neural_mean(&self, x: &[f64], z: Option<&[f64]>) -> Result<Vec<f64>> {
        let net = self.net.as_ref().ok_or_else(|| Error::Contract("neural policy without parameters".into()))?;
        net.forward(&self.net_input(x, z))
    }

    pub fn from_scaled(&self, s: &[f64]) -> Vec<f64> {
        let (c, h) = (self.space.center(), self.space.half_width());
        self.space.clip(&s.iter().zip(c.iter().zip(&h)).map(|(v, (c, h))| c + h * v).collect::<Vec<_>>())
    }

    /// Action for state `x` and latent `z`, clipped to the box. Analytic
    /// controllers need a model to invert; random and exploring neural
    /// policies draw from `rng`.
    pub fn act(&self, x: &[f64], z: Option<&[f64]>, model: Option<&dyn LatentDynamics>, rng: &mut Rng) -> Result<Vec<f64>> {
        let d = self.env.dims();
        ensure!(x.len() == d.n, Contract, "policy state length {} != {}", x.len(), d.n);
        if self.conditions_on_latent {
            ensure!(z.is_some(), Contract, "{:?} policy needs a latent", self.kind);
        }
        match self.kind {
            PolicyKind::Random => Ok(self.space.sample(rng)),
            PolicyKind::AnalyticPendulum | PolicyKind::AnalyticNav => {
                let model = model.ok_or_else(|| Error::Contract("analytic policy needs a dynamics model".into()))?;
                let pred = model.predict(x, z.unwrap())?;
                analytic::act(&self.env, x, &pred, &self.space)
            }
            PolicyKind::Neural => {
                let mut s = self.neural_mean(x, z)?;
                if self.sigma > 0.0 {
                    for v in &mut s {
                        let n: f64 = StandardNormal.sample(rng);
                        *v += self.sigma * n;
                    }
                }
                Ok(self.from_scaled(&s))
            }
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new("policy", seed);
        if let Some(net) = &self.net {
            ck = ck.with_net("pi", net);
        }
        ck.meta = serde_json::json!({
            "kind": self.kind,
            "env": self.env,
            "conditions_on_latent": self.conditions_on_latent,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ensure!(ck.role == "policy", Format, "expected policy checkpoint, found {}", ck.role);
        let f = |e: serde_json::Error| Error::Format(e.to_string());
        let kind: PolicyKind = serde_json::from_value(ck.meta["kind"].clone()).map_err(f)?;
        let env: Env = serde_json::from_value(ck.meta["env"].clone()).map_err(f)?;
        let conditions_on_latent = ck.meta["conditions_on_latent"].as_bool().unwrap_or(false);
        let net = if kind == PolicyKind::Neural { Some(ck.net("pi")?.clone()) } else { None };
        Ok(Self { kind, space: env.action_space(), env, net, conditions_on_latent, sigma: 0.0 })
    }
}
