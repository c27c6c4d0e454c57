use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AdaptModule, HistoryWindow};
use crate::dynlearn::{DynModel, LatentDynamics};
use crate::envs::{ConfigMode, ConfigSampler, Env};
use crate::error::ensure;
use crate::rng::stream;
use crate::stats::mean;
use crate::tensor::{adam_step, chunked_grad, AdamConfig, DenseMatrix, OptimizerState};
use crate::{io, Error, Result};

/// A contiguous state-action record: `xs.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTrajectory {
    pub xs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl RealTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Trajectories from the deployment system; the configuration is unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct RealDataset {
    pub env_id: String,
    pub source: String,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub trajectories: Vec<RealTrajectory>,
}

impl RealDataset {
    pub fn steps(&self) -> usize {
        self.trajectories.iter().map(RealTrajectory::len).sum()
    }

    /// `.real` container: per step `[x, a, x_next]`, trajectories back to back.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut flat = Vec::with_capacity(self.steps() * (2 * self.n + self.m));
        for t in &self.trajectories {
            for i in 0..t.len() {
                flat.extend(&t.xs[i]);
                flat.extend(&t.actions[i]);
                flat.extend(&t.xs[i + 1]);
            }
        }
        let header = json!({
            "env": self.env_id,
            "source": self.source,
            "n": self.n,
            "m": self.m,
            "seed": self.seed,
            "lens": self.trajectories.iter().map(RealTrajectory::len).collect::<Vec<_>>(),
            "record": ["x", "a", "x_next"],
        });
        io::encode("real", &header, &[&flat])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = io::decode(bytes)?;
        ensure!(c.kind == "real", Format, "expected real artifact, found {}", c.kind);
        let h = &c.header;
        let u = |k: &str| h[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::Format(format!("header field {k} missing")));
        let s = |k: &str| h[k].as_str().map(str::to_string).ok_or_else(|| Error::Format(format!("header field {k} missing")));
        let (n, m) = (u("n")?, u("m")?);
        let lens: Vec<usize> = serde_json::from_value(h["lens"].clone()).map_err(|e| Error::Format(e.to_string()))?;
        ensure!(c.sections.len() == 1, Format, "real artifact needs one section");
        let rl = 2 * n + m;
        let flat = &c.sections[0];
        ensure!(flat.len() == lens.iter().sum::<usize>() * rl, Format, "real payload length mismatch");
        let mut off = 0;
        let mut trajectories = Vec::with_capacity(lens.len());
        for len in lens {
            let mut t = RealTrajectory { xs: Vec::with_capacity(len + 1), actions: Vec::with_capacity(len) };
            for i in 0..len {
                let r = &flat[off..off + rl];
                if i == 0 {
                    t.xs.push(r[..n].to_vec());
                }
                ensure!(r[..n] == t.xs[i][..], Format, "trajectory is not contiguous");
                t.actions.push(r[n..n + m].to_vec());
                t.xs.push(r[n + m..].to_vec());
                off += rl;
            }
            trajectories.push(t);
        }
        let seed = h["seed"].as_u64().ok_or_else(|| Error::Format("header field seed missing".into()))?;
        Ok(Self { env_id: s("env")?, source: s("source")?, n, m, seed, trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Per-step phase advance of the command wobble, rad.
const WOBBLE_RATE: f64 = 0.15;

/// Scripted driving in circles: each trajectory holds a random speed and
/// steering command, each with its own sinusoidal wobble.
pub fn collect_real_circles(env: &Env, trajectories: usize, steps: usize, seed: u64) -> Result<RealDataset> {
    ensure!(trajectories >= 1 && steps >= 1, Contract, "empty real collection request");
    let space = env.action_space();
    let trajs = crate::par::par_map_range(trajectories, |i| {
        let mut rng = stream(seed, "real", i as u64);
        let cfg = ConfigSampler::new(env, ConfigMode::PerEpisodeRandom, &mut rng);
        let mut x = env.reset_collect(&mut rng);
        let lo: Vec<f64> = space.lo.iter().zip(&space.hi).map(|(l, h)| l + 0.25 * (h - l)).collect();
        let base: Vec<f64> = lo.iter().zip(&space.hi).map(|(l, h)| rng.random_range(*l..*h - 0.25 * (h - l) + 1e-9)).collect();
        let phase: Vec<f64> = base.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let mut t = RealTrajectory { xs: vec![x.clone()], actions: Vec::with_capacity(steps) };
        for s in 0..steps {
            let a: Vec<f64> = base
                .iter()
                .zip(space.half_width())
                .zip(&phase)
                .map(|((b, h), p)| b + 0.3 * h * (p + WOBBLE_RATE * s as f64).sin())
                .collect();
            let a = space.clip(&a);
            x = env.step_x(&x, &a, &cfg.at(s, &mut rng).e)?;
            t.actions.push(a);
            t.xs.push(x.clone());
        }
        Ok::<_, Error>(t)
    });
    let d = env.dims();
    Ok(RealDataset {
        env_id: env.id().into(),
        source: "scripted circles".into(),
        n: d.n,
        m: d.m,
        seed,
        trajectories: trajs.into_iter().collect::<Result<_>>()?,
    })
}

/// One fine-tuning sample: the window preceding step `t` and the step itself.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneSample {
    pub window: DenseMatrix,
    pub filled: usize,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// Full-window samples of every trajectory long enough to give two.
pub fn tune_samples(real: &RealDataset, phi: &AdaptModule) -> (Vec<TuneSample>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for t in &real.trajectories {
        if t.len() < phi.k + 2 {
            log::warn!("skipping real trajectory of {} steps (need {})", t.len(), phi.k + 2);
            skipped += 1;
            continue;
        }
        let mut w = phi.empty_window();
        for i in 0..t.len() {
            if i >= phi.k {
                out.push(TuneSample {
                    window: w.to_matrix(),
                    filled: phi.k,
                    x: t.xs[i].clone(),
                    a: t.actions[i].clone(),
                    x_next: t.xs[i + 1].clone(),
                });
            }
            w.push(&t.xs[i], &t.actions[i]).expect("trajectory dims");
        }
    }
    (out, skipped)
}

/// One-step 2-norm errors `‖x_next − x̂_next‖₂` with `ẑ = φ(window)`.
pub fn one_step_errors(model: &DynModel, phi: &AdaptModule, samples: &[&TuneSample]) -> Result<Vec<f64>> {
    crate::par::par_map(samples, |s| {
        let z = phi.infer_matrix(&s.window, s.filled)?;
        let xh = model.predict(&s.x, &z)?.next(&s.a);
        Ok(model.state_diff(&s.x_next, &xh).iter().map(|v| v * v).sum::<f64>().sqrt())
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub chunk: usize,
    pub seed: u64,
}

impl Default for TuneHyper {
    fn default() -> Self {
        Self { lr: 1e-4, epochs: 300, batch_size: 32, holdout: 0.2, patience: 40, chunk: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    /// Mean held-out one-step 2-norm error before and after.
    pub heldout_before: f64,
    pub heldout_after: f64,
    pub heldout_curve: Vec<f64>,
    pub best_epoch: usize,
    pub train_size: usize,
    pub skipped_trajectories: usize,
}

/// `Σ‖x̂_{t+1} − x_{t+1}‖²` in normalized units with `ẑ = φ(window)` on the tape.
pub fn tape_tune_loss(
    tape: &mut crate::tensor::Tape,
    vars: &[crate::tensor::NetVars],
    model: &DynModel,
    phi: &AdaptModule,
    items: &[&TuneSample],
) -> Result<crate::tensor::Var> {
    let rows = |f: &dyn Fn(&TuneSample) -> Vec<f64>| DenseMatrix::from_rows(&items.iter().map(|s| f(s)).collect::<Vec<_>>());
    let w = tape.leaf(rows(&|s| phi.input(&s.window, s.filled))?);
    let feat = tape.leaf(rows(&|s| model.features(&s.x))?);
    let a = tape.leaf(rows(&|s| model.scaled_action(&s.a))?);
    let y = tape.leaf(rows(&|s| model.target(&s.x, &s.x_next))?);
    let z = tape.forward(&vars[0], w)?;
    let r = DynModel::tape_residual(tape, &vars[1], &vars[2], feat, z, a, y)?;
    let sq = tape.square(r);
    Ok(tape.sum(sq))
}

/// Fine-tunes the dynamics heads and `φ` on real data with a fresh Adam
/// state, keeping the parameters with the lowest held-out error. The
/// encoder `μ` is left untouched.
pub fn finetune(model: &mut DynModel, phi: &mut AdaptModule, real: &RealDataset, hyper: &TuneHyper) -> Result<TuneReport> {
    ensure!(!real.trajectories.is_empty(), Contract, "finetune needs real data");
    ensure!(real.n == model.dims.n && real.m == model.dims.m, Contract, "real data dims do not match the model");
    let (samples, skipped) = tune_samples(real, phi);
    ensure!(samples.len() >= 2, Contract, "finetune needs at least two full-window samples");
    let mut refs: Vec<&TuneSample> = samples.iter().collect();
    refs.shuffle(&mut stream(hyper.seed, "tune-split", 0));
    let n_hold = ((refs.len() as f64 * hyper.holdout).round() as usize).clamp(1, refs.len() - 1);
    let hold = refs.split_off(refs.len() - n_hold);
    let mut train = refs;
    let cfg = AdamConfig::with_lr(hyper.lr);
    let mut opt: Vec<OptimizerState> =
        [&phi.net, &model.f_head, &model.g_head].iter().map(|p| OptimizerState::new(p.theta.len())).collect();
    let eval = |model: &DynModel, phi: &AdaptModule| -> Result<f64> { Ok(mean(&one_step_errors(model, phi, &hold)?)) };
    let before = eval(model, phi)?;
    let mut best = (before, phi.net.clone(), model.f_head.clone(), model.g_head.clone(), 0usize);
    let mut curve = Vec::new();
    for epoch in 0..hyper.epochs {
        train.shuffle(&mut stream(hyper.seed, "tune-epoch", epoch as u64));
        for batch in train.chunks(hyper.batch_size.max(1)) {
            let wgt = 1.0 / batch.len() as f64;
            let (p0, f0, g0) = (phi.net.clone(), model.f_head.clone(), model.g_head.clone());
            let (_, g) = chunked_grad(&[&p0, &f0, &g0], batch, hyper.chunk, |tape, vars, items| {
                let s = tape_tune_loss(tape, vars, model, phi, items)?;
                Ok(tape.scale(s, wgt))
            })?;
            adam_step(&mut phi.net.theta, &g[0], &mut opt[0], &cfg)?;
            adam_step(&mut model.f_head.theta, &g[1], &mut opt[1], &cfg)?;
            adam_step(&mut model.g_head.theta, &g[2], &mut opt[2], &cfg)?;
        }
        let h = eval(model, phi)?;
        curve.push(h);
        if h < best.0 {
            best = (h, phi.net.clone(), model.f_head.clone(), model.g_head.clone(), epoch + 1);
        } else if epoch + 1 - best.4 >= hyper.patience {
            break;
        }
    }
    phi.net = best.1;
    model.f_head = best.2;
    model.g_head = best.3;
    Ok(TuneReport {
        heldout_before: before,
        heldout_after: best.0,
        heldout_curve: curve,
        best_epoch: best.4,
        train_size: train.len(),
        skipped_trajectories: skipped,
    })
}

/// Open-loop prediction along a real trajectory: the first `warmup` states
/// are read from the log, afterwards the model is fed its own predictions
/// and the logged actions.
pub fn open_loop(model: &DynModel, phi: &AdaptModule, traj: &RealTrajectory, warmup: usize) -> Result<Vec<Vec<f64>>> {
    ensure!(warmup >= 1 && warmup <= traj.len(), Contract, "warm-up {warmup} outside trajectory of {}", traj.len());
    let mut w: HistoryWindow = phi.empty_window();
    let mut out = Vec::with_capacity(traj.len() + 1);
    for i in 0..warmup {
        out.push(traj.xs[i].clone());
        w.push(&traj.xs[i], &traj.actions[i])?;
    }
    let mut x = traj.xs[warmup].clone();
    out.push(x.clone());
    for i in warmup..traj.len() {
        let z = phi.infer_latent(&w)?;
        let mut xn = model.predict(&x, &z)?.next(&traj.actions[i]);
        for &d in &model.angle_dims {
            xn[d] = crate::envs::wrap_angle(xn[d]);
        }
        w.push(&x, &traj.actions[i])?;
        x = xn;
        out.push(x.clone());
    }
    Ok(out)
}
