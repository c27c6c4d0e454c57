//! Experiment configuration.
//!
//! A config file is TOML. Every key is optional: the file is merged over
//! the preset of its `env`, so `env = "pendulum"` alone is a complete
//! config. See the README for the full schema.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use safedpa::adapt::{AdaptArch, AdaptHyper, DaggerSpec, TuneHyper};
use safedpa::dynlearn::{DynArch, DynHyper};
use safedpa::envs::Env;
use safedpa::policy::RlHyper;
use safedpa::safeguard::MarginConfig;
use safedpa::tensor::ConvLayer;
use serde::{Deserialize, Serialize};

/// A deployment variant compared in sweeps, evaluations and heatmaps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Adapted model and filter; the fine-tuned pair when fine-tuning is configured.
    SafeDpa,
    /// Adapted model and filter before fine-tuning.
    SafeDpaNoTune,
    /// Configuration-blind model trained only under wind direction `α` (degrees).
    Fix(f64),
    /// Configuration-blind model trained over all directions.
    Mix,
    /// The adaptive policy with no filter.
    NoFilter,
    /// A neural policy trained with a violation penalty `β`, no filter.
    Penalty(f64),
}

impl Method {
    /// File stem of the artifacts a baseline owns.
    pub fn stem(&self) -> String {
        self.to_string().to_lowercase()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SafeDpa => write!(f, "SafeDPA"),
            Method::SafeDpaNoTune => write!(f, "SafeDPA_noTune"),
            Method::Fix(a) => write!(f, "Fix-{a}"),
            Method::Mix => write!(f, "Mix"),
            Method::NoFilter => write!(f, "NoFilter"),
            Method::Penalty(b) => write!(f, "Penalty-{b}"),
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let l = s.trim().to_lowercase();
        let num = |rest: &str| rest.parse::<f64>().ok().filter(|v| v.is_finite());
        Ok(match l.as_str() {
            "safedpa" => Method::SafeDpa,
            "safedpa_notune" | "safedpa-notune" => Method::SafeDpaNoTune,
            "mix" => Method::Mix,
            "nofilter" => Method::NoFilter,
            _ => match l.split_once('-') {
                Some(("fix", a)) if num(a).is_some() => Method::Fix(num(a).unwrap()),
                Some(("penalty", b)) if num(b).is_some_and(|b| b >= 0.0) => Method::Penalty(num(b).unwrap()),
                _ => bail!("unknown method `{s}` (expected SafeDPA, SafeDPA_noTune, Fix-<deg>, Mix, NoFilter or Penalty-<beta>)"),
            },
        })
    }
}

impl TryFrom<String> for Method {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    /// Random-walk transitions for the dynamics dataset.
    pub transitions: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { transitions: 100_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Random,
    Analytic,
    Neural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyChoice,
    /// Hidden widths of neural policies (the main one and penalty baselines).
    pub hidden: Vec<usize>,
    pub rl: RlHyper,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { kind: PolicyChoice::Random, hidden: vec![64, 64], rl: RlHyper::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// History length `k`.
    pub window: usize,
    pub hyper: AdaptHyper,
    pub dagger: DaggerSpec,
    /// Run the collection episodes behind a filter built from the
    /// no-adaptation margin.
    pub filtered: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            window: 20,
            hyper: AdaptHyper { epochs: 20, ..AdaptHyper::default() },
            dagger: DaggerSpec { rounds: 2, episodes_per_round: 60, seed: 0 },
            filtered: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginStageConfig {
    pub bounds: MarginConfig,
    /// Barrier decay rate `η ∈ (0, 1]`.
    pub eta: f64,
    pub cold_start_factor: f64,
    /// Fresh episodes, with the adaptation module in the loop, whose
    /// windows calibrate `ε_z`.
    pub latent_episodes: usize,
}

impl Default for MarginStageConfig {
    fn default() -> Self {
        Self { bounds: MarginConfig::default(), eta: 0.1, cold_start_factor: 2.0, latent_episodes: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Environment standing in for the real system.
    pub real_env: String,
    /// Real steps as a fraction of `collect.transitions`.
    pub fraction: f64,
    /// Length of each real calibration trajectory.
    pub trajectory_steps: usize,
    pub test_trajectories: usize,
    pub test_steps: usize,
    /// Logged steps read before the open-loop rollout starts.
    pub warmup: usize,
    pub hyper: TuneHyper,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            real_env: "bicycle_real".into(),
            fraction: 0.001,
            trajectory_steps: 25,
            test_trajectories: 10,
            test_steps: 100,
            warmup: 10,
            hyper: TuneHyper { lr: 3e-4, ..TuneHyper::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub directions: Vec<f64>,
    pub episodes: usize,
    pub steps: usize,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            directions: (0..12).map(|i| 30.0 * i as f64).collect(),
            episodes: 50,
            steps: 500,
            methods: vec![Method::SafeDpa, Method::NoFilter],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Episodes are dealt round-robin over these fixed directions; empty
    /// draws one uniform direction per episode.
    pub directions: Vec<f64>,
    /// Episode length; the environment horizon when absent.
    pub steps: Option<usize>,
    pub methods: Vec<Method>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 100, directions: vec![], steps: None, methods: vec![Method::SafeDpa, Method::NoFilter] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub direction: f64,
    /// State at which `Δh` is evaluated; the environment reset state when empty.
    pub x_probe: Vec<f64>,
    /// Points per action axis.
    pub grid: usize,
    /// Compared against the true dynamics, which are always included.
    pub methods: Vec<Method>,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self { direction: 135.0, x_probe: vec![], grid: 41, methods: vec![Method::SafeDpa, Method::Fix(315.0)] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Transitions collected at the fixed direction of each Fix baseline.
    pub fix_transitions: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { fix_transitions: 50_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub collect: CollectConfig,
    pub dynamics: DynHyper,
    pub policy: PolicyConfig,
    pub adapt: AdaptConfig,
    pub margin: MarginStageConfig,
    pub finetune: Option<FinetuneConfig>,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
    pub heatmap: HeatmapConfig,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("pendulum").expect("pendulum preset")
    }
}

fn dyn_hyper(epochs: usize, arch: DynArch) -> DynHyper {
    DynHyper { arch, epochs, ..DynHyper::default() }
}

impl ExperimentConfig {
    /// Defaults tuned per environment.
    pub fn preset(env: &str) -> Result<Self> {
        Env::from_id(env)?;
        let base = Self {
            env: env.into(),
            seed: 0,
            out: PathBuf::from("runs").join(env),
            collect: CollectConfig::default(),
            dynamics: dyn_hyper(30, DynArch::default()),
            policy: PolicyConfig::default(),
            adapt: AdaptConfig::default(),
            margin: MarginStageConfig::default(),
            finetune: None,
            sweep: SweepConfig::default(),
            eval: EvalConfig::default(),
            heatmap: HeatmapConfig::default(),
            baselines: BaselineConfig::default(),
        };
        let fixes = [45.0, 135.0, 225.0, 315.0].map(Method::Fix);
        Ok(match env {
            "pendulum" => {
                let mut c = base;
                c.margin.eta = 0.2;
                c.sweep.methods = [Method::SafeDpa].into_iter().chain(fixes).chain([Method::Mix, Method::NoFilter]).collect();
                c
            }
            "pendulum_hazard" => {
                let mut c = base;
                c.policy.kind = PolicyChoice::Analytic;
                c.adapt.dagger.episodes_per_round = 40;
                c.margin.eta = 0.5;
                c.margin.latent_episodes = 40;
                c.eval.directions = base_directions();
                c
            }
            "planar" => {
                let mut c = base;
                c.policy.kind = PolicyChoice::Analytic;
                c.margin.eta = 0.5;
                c.heatmap.x_probe = vec![0.3, 0.3, 0.2, 0.2];
                c.sweep.methods = [Method::SafeDpa].into_iter().chain(fixes).chain([Method::Mix, Method::NoFilter]).collect();
                c
            }
            "bicycle" => {
                let mut c = base;
                c.collect.transitions = 400_000;
                c.dynamics = dyn_hyper(10, DynArch { bilinear: true, ..DynArch::default() });
                c.policy.kind = PolicyChoice::Analytic;
                c.adapt.window = 10;
                c.adapt.hyper.arch =
                    AdaptArch { conv_layers: vec![ConvLayer { filters: 16, kernel: 3, stride: 1 }], ..AdaptArch::default() };
                c.adapt.filtered = false;
                c.margin.eta = 0.5;
                c.finetune = Some(FinetuneConfig::default());
                c.sweep.methods = vec![Method::SafeDpa, Method::SafeDpaNoTune, Method::NoFilter];
                c.eval.methods = c.sweep.methods.clone();
                c
            }
            _ => {
                let mut c = base;
                c.adapt.window = 8;
                c
            }
        })
    }

    /// Parses TOML text merged over the preset of its `env` (default `pendulum`).
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let env = match user.get("env") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => bail!("`env` must be a string"),
            None => "pendulum".into(),
        };
        let preset = Self::preset(&env)?;
        let mut merged = toml::Table::try_from(&preset).context("serializing preset")?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged).try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let env = Env::from_id(&self.env)?;
        ensure!(self.collect.transitions > 0, "collect.transitions must be positive");
        ensure!(self.margin.eta > 0.0 && self.margin.eta <= 1.0, "margin.eta must lie in (0, 1]");
        ensure!(self.margin.cold_start_factor >= 1.0, "margin.cold_start_factor must be at least 1");
        ensure!(self.adapt.window > 0, "adapt.window must be positive");
        ensure!(self.heatmap.grid >= 2, "heatmap.grid needs at least 2 points per axis");
        let all = self.sweep.directions.iter().chain(&self.eval.directions).chain([&self.heatmap.direction]);
        ensure!(all.into_iter().all(|d| d.is_finite()), "directions must be finite");
        if !self.heatmap.x_probe.is_empty() {
            ensure!(self.heatmap.x_probe.len() == env.dims().n, "heatmap.x_probe needs {} entries", env.dims().n);
        }
        if let Some(f) = &self.finetune {
            let real = Env::from_id(&f.real_env)?;
            ensure!(real.dims() == env.dims(), "finetune.real_env {} has different dimensions", f.real_env);
            ensure!(f.fraction > 0.0, "finetune.fraction must be positive");
            ensure!(f.trajectory_steps > self.adapt.window, "finetune.trajectory_steps must exceed adapt.window");
            ensure!(f.test_steps > f.warmup, "finetune.test_steps must exceed finetune.warmup");
        }
        if self.policy.kind == PolicyChoice::Analytic {
            safedpa::policy::Policy::analytic(&env)?;
        }
        Ok(())
    }

    /// Every method named by the sweep, evaluation and heatmap sections, deduplicated.
    pub fn all_methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = vec![];
        for m in self.sweep.methods.iter().chain(&self.eval.methods).chain(&self.heatmap.methods) {
            if !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }

    /// Real-system stand-in when fine-tuning is configured, else the training env.
    pub fn deploy_env_id(&self) -> &str {
        self.finetune.as_ref().map_or(&self.env, |f| &f.real_env)
    }

    /// Real calibration trajectories implied by `fraction`.
    pub fn real_trajectories(&self) -> Option<usize> {
        let f = self.finetune.as_ref()?;
        let steps = (self.collect.transitions as f64 * f.fraction).round() as usize;
        Some((steps / f.trajectory_steps).max(1))
    }
}

fn base_directions() -> Vec<f64> {
    (0..12).map(|i| 30.0 * i as f64).collect()
}

/// Recursive table merge; `over` wins on conflicts.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
