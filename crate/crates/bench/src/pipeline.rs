//! The staged experiment pipeline.
//!
//! Every stage reads and writes named artifacts in the output directory.
//! A stage's cache key hashes its parameters and the contents of its
//! inputs; a stage whose key matches the manifest and whose outputs are
//! unchanged on disk is skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use safedpa::adapt::{
    collect_adapt, collect_real_circles, finetune, train_adapt_dagger, tune_samples, AdaptModule, HistoryWindow,
    RealDataset,
};
use safedpa::dynlearn::{collect_random, collect_with_mode, train_dyn, Dataset, DynHyper, DynModel, LatentDynamics, OracleDynamics};
use safedpa::envs::{ConfigMode, Env, EnvConfig};
use safedpa::io::Checkpoint;
use safedpa::policy::{rollout, train_pg, Policy, RolloutSpec};
use safedpa::rng::{derive, seeded};
use safedpa::safeguard::{
    certified_model_lipschitz, estimate_margin, ErrorBounds, LatentSource, LipschitzMode, SafeDpaRuntime, SafeFilter,
};
use safedpa::stats::{l1, quantile};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::{file_hash, stage_key, Manifest, MissingArtifact, StageRecord};
use crate::config::{ExperimentConfig, Method, PolicyChoice};
use crate::heatmap::{delta_h_grid, heatmap_csv, summary_csv as heatmap_summary_csv, Heatmap};
use crate::metrics::{polar_csv, pool, rows_csv, MetricsRow};
use crate::report::{finetune_summary, summary_csv as finetune_summary_csv, FinetuneSummary};

pub const DATA: &str = "data.trans";
pub const DYN: &str = "dyn.ckpt";
pub const DYN_REPORT: &str = "dyn_report.json";
pub const POLICY: &str = "policy.ckpt";
pub const POLICY_REPORT: &str = "policy_report.json";
pub const PHI: &str = "phi.ckpt";
pub const ADAPT_REPORT: &str = "adapt_report.json";
pub const MARGIN: &str = "margin.json";
pub const REAL: &str = "real.real";
pub const REAL_TEST: &str = "real_test.real";
pub const DYN_TUNED: &str = "dyn_tuned.ckpt";
pub const PHI_TUNED: &str = "phi_tuned.ckpt";
pub const MARGIN_TUNED: &str = "margin_tuned.json";
pub const TUNE_REPORT: &str = "tune_report.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const POLAR_CSV: &str = "polar.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_JSON: &str = "eval.json";
pub const HEATMAP_CSV: &str = "heatmap.csv";
pub const HEATMAP_SUMMARY: &str = "heatmap_summary.csv";
pub const HEATMAP_JSON: &str = "heatmap.json";
pub const FINETUNE_CSV: &str = "finetune_report.csv";
pub const FINETUNE_JSON: &str = "finetune_report.json";
pub const OPEN_LOOP_CSV: &str = "open_loop.csv";

/// CLI subcommand that writes `artifact`.
pub fn producer(artifact: &str) -> &'static str {
    match artifact {
        DATA => "collect",
        DYN | DYN_REPORT => "train-dyn",
        POLICY | POLICY_REPORT => "train-policy",
        PHI | ADAPT_REPORT => "train-adapt",
        MARGIN => "margin",
        REAL | REAL_TEST | DYN_TUNED | PHI_TUNED | MARGIN_TUNED | TUNE_REPORT => "finetune",
        _ => "sweep",
    }
}

/// A margin together with the filter settings derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginArtifact {
    pub bounds: ErrorBounds,
    pub filter: SafeFilter,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageRun {
    pub stage: String,
    pub cached: bool,
}

/// Owned parts of one deployed method.
pub struct Deployment {
    pub method: Method,
    pub env: Env,
    pub policy: Policy,
    pub model: DynModel,
    pub phi: Option<AdaptModule>,
    pub filter: Option<SafeFilter>,
}

impl Deployment {
    pub fn runtime(&self) -> SafeDpaRuntime<'_> {
        SafeDpaRuntime {
            env: &self.env,
            policy: &self.policy,
            model: &self.model,
            latent: self.phi.as_ref().map_or(LatentSource::Oracle, LatentSource::Adapt),
            filter: self.filter.as_ref(),
        }
    }
}

/// Correlation of each method's heatmap with the true-dynamics one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub direction: f64,
    pub x_probe: Vec<f64>,
    pub correlations: Vec<(String, Option<f64>)>,
}

impl HeatmapResult {
    pub fn correlation(&self, method: &str) -> Option<f64> {
        self.correlations.iter().find(|(m, _)| m == method).and_then(|c| c.1)
    }
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    manifest: Manifest,
    /// Stages visited since opening, in order.
    pub runs: Vec<StageRun>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Pipeline {
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.out.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = Manifest::load(&dir)?;
        Ok(Self { cfg, dir, manifest, runs: vec![] })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.dir.join(artifact)
    }

    fn env(&self) -> Result<Env> {
        Ok(Env::from_id(&self.cfg.env)?)
    }

    fn deploy_env(&self) -> Result<Env> {
        Ok(Env::from_id(self.cfg.deploy_env_id())?)
    }

    fn seed(&self, tag: &str) -> u64 {
        derive(self.cfg.seed, tag, 0)
    }

    fn require(&self, stage: &str, inputs: &[String]) -> Result<()> {
        for i in inputs {
            if !self.path(i).exists() {
                return Err(MissingArtifact { stage: stage.into(), artifact: i.clone(), producer: producer(i).into() }.into());
            }
        }
        Ok(())
    }

    /// Runs `body` unless the manifest shows an identical completed run.
    fn stage(
        &mut self,
        name: &str,
        params: Value,
        inputs: &[String],
        outputs: &[String],
        body: impl FnOnce(&Self) -> Result<()>,
    ) -> Result<()> {
        self.require(name, inputs)?;
        let mut hashes = BTreeMap::new();
        for i in inputs {
            hashes.insert(i.clone(), file_hash(&self.path(i))?);
        }
        let params = json!({ "env": self.cfg.env, "seed": self.cfg.seed, "stage": params });
        let key = stage_key(name, &params, &hashes);
        if self.manifest.is_fresh(&self.dir, name, &key) {
            info!("{name}: cached");
            self.runs.push(StageRun { stage: name.into(), cached: true });
            return Ok(());
        }
        info!("{name}: running");
        body(self).with_context(|| format!("stage `{name}` failed"))?;
        let mut outs = BTreeMap::new();
        for o in outputs {
            let p = self.path(o);
            ensure!(p.exists(), "stage `{name}` did not write {o}");
            outs.insert(o.clone(), file_hash(&p)?);
        }
        self.manifest.stages.insert(name.into(), StageRecord { key, params, inputs: hashes, outputs: outs });
        self.manifest.save(&self.dir)?;
        self.runs.push(StageRun { stage: name.into(), cached: false });
        Ok(())
    }

    fn dyn_hyper(&self) -> DynHyper {
        DynHyper { seed: self.seed("dyn"), e_blind: false, ..self.cfg.dynamics.clone() }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        Ok(Dataset::load(&self.path(DATA))?)
    }

    pub fn load_model(&self, artifact: &str) -> Result<DynModel> {
        Ok(DynModel::from_checkpoint(&Checkpoint::load(&self.path(artifact))?)?)
    }

    pub fn load_phi(&self, artifact: &str) -> Result<AdaptModule> {
        Ok(AdaptModule::from_checkpoint(&Checkpoint::load(&self.path(artifact))?)?)
    }

    pub fn load_policy(&self, artifact: &str) -> Result<Policy> {
        Ok(Policy::from_checkpoint(&Checkpoint::load(&self.path(artifact))?)?)
    }

    pub fn load_margin(&self, artifact: &str) -> Result<MarginArtifact> {
        read_json(&self.path(artifact))
    }

    fn margin_artifact(&self, bounds: ErrorBounds) -> MarginArtifact {
        let filter = SafeFilter {
            eps_unit: bounds.unit_margin(),
            eta: self.cfg.margin.eta,
            cold_start_factor: self.cfg.margin.cold_start_factor,
            ..SafeFilter::default()
        };
        MarginArtifact { bounds, filter }
    }

    /// Margin of `model` with the latent taken as exact, on its held-out split.
    fn blind_margin(&self, model: &DynModel, data: &Dataset, split_seed: u64) -> Result<ErrorBounds> {
        let (_, hold) = data.split(self.cfg.dynamics.holdout, split_seed);
        let mcfg = safedpa::safeguard::MarginConfig { seed: self.seed("margin-lipschitz"), ..self.cfg.margin.bounds.clone() };
        Ok(estimate_margin(model, None, &hold, &self.env()?.action_space(), &mcfg)?)
    }

    /// The filter used while collecting adaptation data, if configured.
    fn collection_filter(&self, model: &DynModel, data: &Dataset) -> Result<Option<SafeFilter>> {
        if !self.cfg.adapt.filtered {
            return Ok(None);
        }
        Ok(Some(self.margin_artifact(self.blind_margin(model, data, self.dyn_hyper().seed)?).filter))
    }

    pub fn collect(&mut self) -> Result<()> {
        let params = json!({ "transitions": self.cfg.collect.transitions });
        self.stage("collect", params, &[], &names(&[DATA]), |p| {
            let data = collect_random(&p.env()?, p.cfg.collect.transitions, p.seed("collect"))?;
            data.save(&p.path(DATA))?;
            Ok(())
        })
    }

    pub fn train_dyn(&mut self) -> Result<()> {
        let params = serde_json::to_value(&self.cfg.dynamics)?;
        self.stage("train-dyn", params, &names(&[DATA]), &names(&[DYN, DYN_REPORT]), |p| {
            let data = p.load_dataset()?;
            let hyper = p.dyn_hyper();
            let mut model = DynModel::new(&p.env()?, &hyper.arch, false, &mut seeded(p.seed("dyn-init")))?;
            let rep = train_dyn(&data, &mut model, &hyper)?;
            info!("dynamics held-out mse {:.3e}", rep.heldout.mse);
            model.to_checkpoint(hyper.seed).save(&p.path(DYN))?;
            write_json(&p.path(DYN_REPORT), &rep)
        })
    }

    fn train_neural(&self, rl: &safedpa::policy::RlHyper, tag: &str) -> Result<(Policy, safedpa::policy::PgReport)> {
        let env = self.env()?;
        let model = self.load_model(DYN)?;
        let mut pi = Policy::neural(&env, model.latent_dim, self.cfg.policy.hidden.clone(), &mut seeded(self.seed(&format!("{tag}-init"))))?;
        let h = safedpa::policy::RlHyper { seed: self.seed(tag), ..rl.clone() };
        let rep = train_pg(&env, &mut pi, &model, &h)?;
        Ok((pi, rep))
    }

    pub fn train_policy(&mut self) -> Result<()> {
        let params = serde_json::to_value(&self.cfg.policy)?;
        let neural = self.cfg.policy.kind == PolicyChoice::Neural;
        let (inputs, outputs) = if neural { (vec![DYN], vec![POLICY, POLICY_REPORT]) } else { (vec![], vec![POLICY]) };
        self.stage("train-policy", params, &names(&inputs), &names(&outputs), |p| {
            let env = p.env()?;
            let pi = match p.cfg.policy.kind {
                PolicyChoice::Random => Policy::random(&env),
                PolicyChoice::Analytic => Policy::analytic(&env)?,
                PolicyChoice::Neural => {
                    let (pi, rep) = p.train_neural(&p.cfg.policy.rl, "policy")?;
                    write_json(&p.path(POLICY_REPORT), &rep)?;
                    pi
                }
            };
            pi.to_checkpoint(p.seed("policy")).save(&p.path(POLICY))?;
            Ok(())
        })
    }

    pub fn train_adapt(&mut self) -> Result<()> {
        let mut params = serde_json::to_value(&self.cfg.adapt)?;
        if self.cfg.adapt.filtered {
            params["collection_filter"] = json!({ "bounds": self.cfg.margin.bounds, "eta": self.cfg.margin.eta,
                "cold_start_factor": self.cfg.margin.cold_start_factor, "holdout": self.cfg.dynamics.holdout });
        }
        self.stage("train-adapt", params, &names(&[DATA, DYN, POLICY]), &names(&[PHI, ADAPT_REPORT]), |p| {
            let env = p.env()?;
            let (data, model, policy) = (p.load_dataset()?, p.load_model(DYN)?, p.load_policy(POLICY)?);
            let filter = p.collection_filter(&model, &data)?;
            let a = &p.cfg.adapt;
            let d = env.dims();
            let mut phi = AdaptModule::new(
                d.n,
                d.m,
                a.window,
                env.angle_dims(),
                model.latent_dim,
                &a.hyper.arch,
                &mut seeded(p.seed("adapt-init")),
            )?;
            let hyper = safedpa::adapt::AdaptHyper { seed: p.seed("adapt"), ..a.hyper.clone() };
            let spec = safedpa::adapt::DaggerSpec { seed: p.seed("dagger"), ..a.dagger.clone() };
            let (samples, reps) = train_adapt_dagger(&env, &policy, &model, filter.as_ref(), &mut phi, &hyper, &spec)?;
            if let Some(r) = reps.last() {
                info!("adaptation held-out mse {:.3e} (target variance {:.3e})", r.heldout_mse, r.target_var);
            }
            phi.to_checkpoint(hyper.seed).save(&p.path(PHI))?;
            write_json(&p.path(ADAPT_REPORT), &json!({ "samples": samples.len(), "rounds": reps }))
        })
    }

    pub fn margin(&mut self) -> Result<()> {
        let params = json!({ "margin": self.cfg.margin, "holdout": self.cfg.dynamics.holdout,
            "filtered": self.cfg.adapt.filtered, "window": self.cfg.adapt.window });
        self.stage("margin", params, &names(&[DATA, DYN, PHI, POLICY]), &names(&[MARGIN]), |p| {
            let env = p.env()?;
            let (data, model, phi, policy) = (p.load_dataset()?, p.load_model(DYN)?, p.load_phi(PHI)?, p.load_policy(POLICY)?);
            let filter = p.collection_filter(&model, &data)?;
            let rt = SafeDpaRuntime {
                env: &env,
                policy: &policy,
                model: &model,
                latent: LatentSource::Adapt(&phi),
                filter: filter.as_ref(),
            };
            let samples = collect_adapt(&rt, phi.k, p.cfg.margin.latent_episodes, p.seed("margin-latent"))?;
            let (_, hold) = data.split(p.cfg.dynamics.holdout, p.dyn_hyper().seed);
            let mcfg = safedpa::safeguard::MarginConfig { seed: p.seed("margin-lipschitz"), ..p.cfg.margin.bounds.clone() };
            let bounds = estimate_margin(&model, Some((&phi, &samples)), &hold, &env.action_space(), &mcfg)?;
            info!("unit margin {:.4} (eps_f {:.3e}, eps_z {:.3e})", bounds.unit_margin(), bounds.eps_f, bounds.eps_z);
            write_json(&p.path(MARGIN), &p.margin_artifact(bounds))
        })
    }

    pub fn finetune(&mut self) -> Result<()> {
        let Some(ft) = self.cfg.finetune.clone() else {
            bail!("this config has no [finetune] section");
        };
        let ntraj = self.cfg.real_trajectories().expect("finetune configured");
        let params = json!({ "finetune": ft, "trajectories": ntraj, "quantile": self.cfg.margin.bounds.quantile,
            "margin": self.cfg.margin });
        let outputs = names(&[REAL, REAL_TEST, DYN_TUNED, PHI_TUNED, MARGIN_TUNED, TUNE_REPORT]);
        self.stage("finetune", params, &names(&[DYN, PHI]), &outputs, |p| {
            let real_env = Env::from_id(&ft.real_env)?;
            let real = collect_real_circles(&real_env, ntraj, ft.trajectory_steps, p.seed("real"))?;
            let test = collect_real_circles(&real_env, ft.test_trajectories, ft.test_steps, p.seed("real-test"))?;
            let (mut model, mut phi) = (p.load_model(DYN)?, p.load_phi(PHI)?);
            let hyper = safedpa::adapt::TuneHyper { seed: p.seed("tune"), ..ft.hyper.clone() };
            let rep = finetune(&mut model, &mut phi, &real, &hyper)?;
            info!("fine-tune held-out error {:.3e} -> {:.3e}", rep.heldout_before, rep.heldout_after);
            // Real one-step residuals under the estimated latent bound the
            // dynamics and latent errors jointly.
            let (samples, _) = tune_samples(&real, &phi);
            ensure!(!samples.is_empty(), "real trajectories too short for the adaptation window");
            let res: Vec<f64> = samples
                .iter()
                .map(|s| {
                    let z = phi.infer_matrix(&s.window, s.filled)?;
                    let xh = model.predict(&s.x, &z)?.next(&s.a);
                    Ok(l1(&model.state_diff(&s.x_next, &xh)))
                })
                .collect::<Result<_>>()?;
            let mcfg = &p.cfg.margin.bounds;
            let (l_f_theta, l_g_theta) = match mcfg.lipschitz {
                LipschitzMode::Certified => certified_model_lipschitz(&model)?,
                LipschitzMode::Empirical => (0.0, 0.0),
            };
            let bounds = ErrorBounds {
                eps_f: quantile(&res, mcfg.quantile).expect("nonempty residuals"),
                l_f: mcfg.l_f,
                l_g: mcfg.l_g,
                l_f_theta,
                l_g_theta,
                quantile: mcfg.quantile,
                n_dyn: res.len(),
                ..ErrorBounds::zero(real_env.action_space().max_l1())
            };
            real.save(&p.path(REAL))?;
            test.save(&p.path(REAL_TEST))?;
            model.to_checkpoint(hyper.seed).save(&p.path(DYN_TUNED))?;
            phi.to_checkpoint(hyper.seed).save(&p.path(PHI_TUNED))?;
            write_json(&p.path(MARGIN_TUNED), &p.margin_artifact(bounds))?;
            write_json(&p.path(TUNE_REPORT), &rep)
        })
    }

    /// Artifacts a baseline trains for itself; empty for the others.
    fn own_artifacts(m: Method) -> Vec<String> {
        match m {
            Method::Fix(_) | Method::Mix => vec![format!("{}.ckpt", m.stem()), format!("{}.margin.json", m.stem())],
            Method::Penalty(_) => vec![format!("{}.ckpt", m.stem()), format!("{}.report.json", m.stem())],
            _ => vec![],
        }
    }

    /// Trains a baseline's own model or policy when needed.
    pub fn baseline(&mut self, m: Method) -> Result<()> {
        let outputs = Self::own_artifacts(m);
        if outputs.is_empty() {
            return Ok(());
        }
        let name = format!("baseline:{}", m.stem());
        let tag = name.clone();
        match m {
            Method::Fix(alpha) => {
                let params = json!({ "alpha": alpha, "transitions": self.cfg.baselines.fix_transitions,
                    "dynamics": self.cfg.dynamics, "margin": self.cfg.margin });
                self.stage(&name, params, &[], &outputs, |p| {
                    let env = p.env()?;
                    let mode = ConfigMode::Fixed { deg: alpha };
                    let data = collect_with_mode(&env, p.cfg.baselines.fix_transitions, mode, p.seed(&format!("{tag}-data")))?;
                    p.train_blind(&data, &tag, &outputs)
                })
            }
            Method::Mix => {
                let params = json!({ "dynamics": self.cfg.dynamics, "margin": self.cfg.margin });
                self.stage(&name, params, &names(&[DATA]), &outputs, |p| p.train_blind(&p.load_dataset()?, &tag, &outputs))
            }
            Method::Penalty(beta) => {
                let rl = safedpa::policy::RlHyper { beta, ..self.cfg.policy.rl.clone() };
                let params = json!({ "rl": rl, "hidden": self.cfg.policy.hidden });
                self.stage(&name, params, &names(&[DYN]), &outputs, |p| {
                    let (pi, rep) = p.train_neural(&rl, &tag)?;
                    pi.to_checkpoint(p.seed(&tag)).save(&p.path(&outputs[0]))?;
                    write_json(&p.path(&outputs[1]), &rep)
                })
            }
            _ => unreachable!(),
        }
    }

    /// Configuration-blind model and its margin with an exact (constant) latent.
    fn train_blind(&self, data: &Dataset, tag: &str, outputs: &[String]) -> Result<()> {
        let env = self.env()?;
        let hyper = DynHyper { seed: self.seed(tag), e_blind: true, ..self.cfg.dynamics.clone() };
        let mut model = DynModel::new(&env, &hyper.arch, true, &mut seeded(self.seed(&format!("{tag}-init"))))?;
        train_dyn(data, &mut model, &hyper)?;
        let bounds = self.blind_margin(&model, data, hyper.seed)?;
        info!("{tag}: unit margin {:.4}", bounds.unit_margin());
        model.to_checkpoint(hyper.seed).save(&self.path(&outputs[0]))?;
        write_json(&self.path(&outputs[1]), &self.margin_artifact(bounds))
    }

    /// Artifacts read when deploying `m`.
    pub fn deployment_inputs(&self, m: Method) -> Vec<String> {
        let tuned = self.cfg.finetune.is_some();
        let mut v = names(&[POLICY]);
        let adapted = if tuned { [DYN_TUNED, PHI_TUNED, MARGIN_TUNED] } else { [DYN, PHI, MARGIN] };
        match m {
            Method::SafeDpa => v.extend(names(&adapted)),
            Method::SafeDpaNoTune => v.extend(names(&[DYN, PHI, MARGIN])),
            Method::NoFilter => v.extend(names(&adapted[..2])),
            Method::Penalty(_) => {
                v = names(&adapted[..2]);
                v.push(Self::own_artifacts(m)[0].clone());
            }
            Method::Fix(_) | Method::Mix => v.extend(Self::own_artifacts(m)),
        }
        v
    }

    /// Loads everything `m` needs; baselines must have been trained.
    pub fn deployment(&self, m: Method) -> Result<Deployment> {
        let inputs = self.deployment_inputs(m);
        self.require(&m.to_string(), &inputs)?;
        let env = self.deploy_env()?;
        let own = Self::own_artifacts(m);
        let (policy, model, phi, filter) = match m {
            Method::SafeDpa | Method::SafeDpaNoTune => (
                self.load_policy(&inputs[0])?,
                self.load_model(&inputs[1])?,
                Some(self.load_phi(&inputs[2])?),
                Some(self.load_margin(&inputs[3])?.filter),
            ),
            Method::NoFilter => (self.load_policy(&inputs[0])?, self.load_model(&inputs[1])?, Some(self.load_phi(&inputs[2])?), None),
            Method::Penalty(_) => (self.load_policy(&own[0])?, self.load_model(&inputs[0])?, Some(self.load_phi(&inputs[1])?), None),
            Method::Fix(_) | Method::Mix => {
                (self.load_policy(POLICY)?, self.load_model(&own[0])?, None, Some(self.load_margin(&own[1])?.filter))
            }
        };
        Ok(Deployment { method: m, env, policy, model, phi, filter })
    }

    fn prepare(&mut self, methods: &[Method]) -> Result<Vec<String>> {
        let mut inputs: Vec<String> = vec![];
        for &m in methods {
            self.baseline(m)?;
            for i in self.deployment_inputs(m) {
                if !inputs.contains(&i) {
                    inputs.push(i);
                }
            }
        }
        Ok(inputs)
    }

    /// Per-direction rates of every sweep method; writes the table, its
    /// JSON form and the polar CSV.
    pub fn sweep(&mut self) -> Result<Vec<MetricsRow>> {
        let methods = self.cfg.sweep.methods.clone();
        let inputs = self.prepare(&methods)?;
        let params = json!({ "sweep": self.cfg.sweep, "deploy_env": self.cfg.deploy_env_id() });
        self.stage("sweep", params, &inputs, &names(&[SWEEP_CSV, SWEEP_JSON, POLAR_CSV]), |p| {
            let sw = &p.cfg.sweep;
            let deps = methods.iter().map(|&m| p.deployment(m)).collect::<Result<Vec<_>>>()?;
            let cells: Vec<(usize, usize)> =
                (0..deps.len()).flat_map(|mi| (0..sw.directions.len()).map(move |di| (mi, di))).collect();
            let rows = safedpa::par::par_map(&cells, |&(mi, di)| {
                let deg = sw.directions[di];
                let spec = RolloutSpec {
                    mode: ConfigMode::Fixed { deg },
                    episodes: sw.episodes,
                    horizon: Some(sw.steps),
                    terminate_on_violation: true,
                    seed: derive(p.cfg.seed, "sweep", di as u64),
                };
                let logs = rollout(&deps[mi].runtime(), &spec)?;
                Ok(MetricsRow::from_logs(&deps[mi].method.to_string(), Some(deg), &logs))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            std::fs::write(p.path(SWEEP_CSV), rows_csv(&rows))?;
            std::fs::write(p.path(POLAR_CSV), polar_csv(&rows))?;
            write_json(&p.path(SWEEP_JSON), &rows)
        })?;
        read_json(&self.path(SWEEP_JSON))
    }

    /// Pooled rates per evaluation method.
    pub fn eval(&mut self) -> Result<Vec<MetricsRow>> {
        let methods = self.cfg.eval.methods.clone();
        let inputs = self.prepare(&methods)?;
        let params = json!({ "eval": self.cfg.eval, "deploy_env": self.cfg.deploy_env_id() });
        self.stage("eval", params, &inputs, &names(&[EVAL_CSV, EVAL_JSON]), |p| {
            let ev = &p.cfg.eval;
            let cells: Vec<(ConfigMode, usize)> = if ev.directions.is_empty() {
                vec![(ConfigMode::PerEpisodeRandom, ev.episodes)]
            } else {
                let d = ev.directions.len();
                ev.directions
                    .iter()
                    .enumerate()
                    .map(|(i, &deg)| (ConfigMode::Fixed { deg }, ev.episodes / d + usize::from(i < ev.episodes % d)))
                    .collect()
            };
            let mut rows = vec![];
            for &m in &methods {
                let dep = p.deployment(m)?;
                let parts = cells
                    .iter()
                    .enumerate()
                    .map(|(ci, &(mode, n))| {
                        let spec = RolloutSpec {
                            mode,
                            episodes: n,
                            horizon: ev.steps,
                            terminate_on_violation: true,
                            seed: derive(p.cfg.seed, "eval", ci as u64),
                        };
                        Ok(MetricsRow::from_logs(&m.to_string(), None, &rollout(&dep.runtime(), &spec)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push(pool(&m.to_string(), &parts));
            }
            std::fs::write(p.path(EVAL_CSV), rows_csv(&rows))?;
            write_json(&p.path(EVAL_JSON), &rows)
        })?;
        read_json(&self.path(EVAL_JSON))
    }

    /// A history window gathered by running `dep` unfiltered for `k` steps
    /// under a fixed direction.
    fn warm_window(&self, dep: &Deployment, phi: &AdaptModule, deg: f64) -> Result<HistoryWindow> {
        let rt = SafeDpaRuntime { filter: None, ..dep.runtime() };
        let spec = RolloutSpec {
            mode: ConfigMode::Fixed { deg },
            episodes: 1,
            horizon: Some(phi.k),
            terminate_on_violation: false,
            seed: self.seed("heatmap-window"),
        };
        let log = rollout(&rt, &spec)?.remove(0);
        let mut w = phi.empty_window();
        for s in &log.steps {
            w.push(&s.x, &s.a_safe)?;
        }
        Ok(w)
    }

    /// `Δh` grids of the true dynamics and every heatmap method.
    pub fn heatmap(&mut self) -> Result<HeatmapResult> {
        let methods = self.cfg.heatmap.methods.clone();
        let inputs = self.prepare(&methods)?;
        let params = json!({ "heatmap": self.cfg.heatmap, "eta": self.cfg.margin.eta, "deploy_env": self.cfg.deploy_env_id() });
        self.stage("heatmap", params, &inputs, &names(&[HEATMAP_CSV, HEATMAP_SUMMARY, HEATMAP_JSON]), |p| {
            let hm = &p.cfg.heatmap;
            let env = p.deploy_env()?;
            let x = if hm.x_probe.is_empty() { env.reset(&mut seeded(p.seed("heatmap-probe"))).x } else { hm.x_probe.clone() };
            let e = EnvConfig::directional(env.disturbance_magnitude(), hm.direction).e;
            let eta = p.cfg.margin.eta;
            let oracle = OracleDynamics { env: env.clone() };
            let reference = delta_h_grid("oracle", &env, &oracle, &e, &x, eta, hm.grid)?;
            let mut maps: Vec<Heatmap> = vec![reference.clone()];
            for &m in &methods {
                let dep = p.deployment(m)?;
                let z = match &dep.phi {
                    Some(phi) => phi.infer_latent(&p.warm_window(&dep, phi, hm.direction)?)?,
                    None => dep.model.latent(&e)?,
                };
                maps.push(delta_h_grid(&m.to_string(), &env, &dep.model, &z, &x, eta, hm.grid)?);
            }
            std::fs::write(p.path(HEATMAP_CSV), heatmap_csv(&maps))?;
            std::fs::write(p.path(HEATMAP_SUMMARY), heatmap_summary_csv(&reference, &maps))?;
            let correlations = maps.iter().map(|m| (m.method.clone(), m.correlation(&reference))).collect();
            write_json(&p.path(HEATMAP_JSON), &HeatmapResult { direction: hm.direction, x_probe: x, correlations })
        })?;
        read_json(&self.path(HEATMAP_JSON))
    }

    /// Untuned versus tuned prediction error on held-out real trajectories.
    pub fn report(&mut self) -> Result<FinetuneSummary> {
        let Some(ft) = self.cfg.finetune.clone() else {
            bail!("this config has no [finetune] section");
        };
        let params = json!({ "warmup": ft.warmup });
        let inputs = names(&[DYN, PHI, DYN_TUNED, PHI_TUNED, REAL_TEST]);
        self.stage("report", params, &inputs, &names(&[FINETUNE_CSV, FINETUNE_JSON, OPEN_LOOP_CSV]), |p| {
            let (m0, p0) = (p.load_model(DYN)?, p.load_phi(PHI)?);
            let (m1, p1) = (p.load_model(DYN_TUNED)?, p.load_phi(PHI_TUNED)?);
            let test = RealDataset::load(&p.path(REAL_TEST))?;
            let (summary, open) = finetune_summary((&m0, &p0), (&m1, &p1), &test, ft.warmup)?;
            std::fs::write(p.path(FINETUNE_CSV), finetune_summary_csv(&summary))?;
            std::fs::write(p.path(OPEN_LOOP_CSV), open)?;
            write_json(&p.path(FINETUNE_JSON), &summary)
        })?;
        read_json(&self.path(FINETUNE_JSON))
    }

    /// Training stages in order: collect, dynamics, policy, adaptation,
    /// margin and, when configured, fine-tuning.
    pub fn train_all(&mut self) -> Result<()> {
        self.collect()?;
        self.train_dyn()?;
        self.train_policy()?;
        self.train_adapt()?;
        self.margin()?;
        if self.cfg.finetune.is_some() {
            self.finetune()?;
        }
        Ok(())
    }

    /// Every stage, then all evaluations that apply to the environment.
    pub fn run_all(&mut self) -> Result<()> {
        self.train_all()?;
        self.sweep()?;
        self.eval()?;
        if self.deploy_env()?.dims().m == 2 && !self.cfg.heatmap.methods.is_empty() {
            self.heatmap()?;
        }
        if self.cfg.finetune.is_some() {
            self.report()?;
        }
        Ok(())
    }
}
