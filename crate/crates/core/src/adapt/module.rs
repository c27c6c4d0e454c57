use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::HistoryWindow;
use crate::error::ensure;
use crate::io::Checkpoint;
use crate::rng::{stream, Rng};
use crate::stats::mean;
use crate::tensor::{
    adam_step, chunked_grad, forward_conv1d, Activation, AdamConfig, Conv1dSpec, ConvLayer, DenseMatrix, NetSpec,
    NetVars, NetworkParams, OptimizerState, Tape, Var,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptArch {
    pub conv_layers: Vec<ConvLayer>,
    pub head_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for AdaptArch {
    fn default() -> Self {
        Self {
            conv_layers: vec![
                ConvLayer { filters: 16, kernel: 5, stride: 2 },
                ConvLayer { filters: 16, kernel: 3, stride: 1 },
            ],
            head_dims: vec![32],
            activation: Activation::Tanh,
        }
    }
}

/// A window snapshot and the encoder's latent for the configuration of the
/// window's last step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptSample {
    pub window: DenseMatrix,
    /// Number of valid (most recent) columns; the rest are zero padding.
    pub filled: usize,
    pub z_target: Vec<f64>,
}

impl AdaptSample {
    pub fn full(&self) -> bool {
        self.filled == self.window.cols()
    }
}

/// Adaptation network `ẑ = φ(window)` with per-channel input standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptModule {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub angle_dims: Vec<usize>,
    pub net: NetworkParams,
    pub chan_mean: Vec<f64>,
    pub chan_std: Vec<f64>,
}

impl AdaptModule {
    pub fn new(
        n: usize,
        m: usize,
        k: usize,
        angle_dims: Vec<usize>,
        latent_dim: usize,
        arch: &AdaptArch,
        rng: &mut Rng,
    ) -> Result<Self> {
        let spec = Conv1dSpec {
            channels_in: n + m,
            window: k,
            conv_layers: arch.conv_layers.clone(),
            head_dims: arch.head_dims.clone(),
            output_dim: latent_dim,
            activation: arch.activation,
        };
        let net = NetworkParams::init(NetSpec::Conv1d(spec), rng)?;
        Ok(Self { n, m, k, angle_dims, net, chan_mean: vec![0.0; n + m], chan_std: vec![1.0; n + m] })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.spec.output_dim()
    }

    pub fn empty_window(&self) -> HistoryWindow {
        HistoryWindow::new(self.n, self.m, self.k, self.angle_dims.clone())
    }

    /// Standardized, flattened network input. Padding slots stay zero.
    pub fn input(&self, w: &DenseMatrix, filled: usize) -> Vec<f64> {
        let pad = w.cols().saturating_sub(filled);
        let mut out = vec![0.0; w.rows() * w.cols()];
        for c in 0..w.rows() {
            for j in pad..w.cols() {
                out[c * w.cols() + j] = (w.get(c, j) - self.chan_mean[c]) / self.chan_std[c];
            }
        }
        out
    }

    pub fn infer_matrix(&self, w: &DenseMatrix, filled: usize) -> Result<Vec<f64>> {
        let x = DenseMatrix::from_vec(w.rows(), w.cols(), self.input(w, filled))?;
        let z = forward_conv1d(&self.net, &x)?;
        ensure!(z.iter().all(|v| v.is_finite()), Numeric, "non-finite latent estimate");
        Ok(z)
    }

    /// `ẑ = φ(window)`; a cold-start window is accepted.
    pub fn infer_latent(&self, window: &HistoryWindow) -> Result<Vec<f64>> {
        ensure!(window.k() == self.k, Contract, "window length {} != {}", window.k(), self.k);
        self.infer_matrix(&window.to_matrix(), window.len())
    }

    pub fn fit_normalizer(&mut self, samples: &[&AdaptSample]) {
        let c = self.n + self.m;
        for ch in 0..c {
            let vals: Vec<f64> = samples.iter().filter(|s| s.full()).flat_map(|s| s.window.row(ch).to_vec()).collect();
            if vals.is_empty() {
                continue;
            }
            let mu = mean(&vals);
            let sd = (vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / vals.len() as f64).sqrt();
            self.chan_mean[ch] = mu;
            self.chan_std[ch] = if sd > 1e-8 { sd } else { 1.0 };
        }
    }

    /// Batch of standardized inputs as a tape leaf.
    pub fn tape_input(&self, tape: &mut Tape, samples: &[&AdaptSample]) -> Result<Var> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| self.input(&s.window, s.filled)).collect();
        Ok(tape.leaf(DenseMatrix::from_rows(&rows)?))
    }

    /// `Σ‖φ(w) − z‖²` over a batch.
    pub fn tape_adapt_loss(&self, tape: &mut Tape, phi: &NetVars, samples: &[&AdaptSample]) -> Result<Var> {
        let x = self.tape_input(tape, samples)?;
        let zt: Vec<Vec<f64>> = samples.iter().map(|s| s.z_target.clone()).collect();
        let zt = tape.leaf(DenseMatrix::from_rows(&zt)?);
        let zh = tape.forward(phi, x)?;
        let d = tape.sub(zh, zt)?;
        let sq = tape.square(d);
        Ok(tape.sum(sq))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new("adapt", seed)
            .with_net("phi", &self.net)
            .with_array("chan_mean", &self.chan_mean)
            .with_array("chan_std", &self.chan_std);
        ck.meta = json!({ "n": self.n, "m": self.m, "k": self.k, "angle_dims": self.angle_dims });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ensure!(ck.role == "adapt", Format, "expected adapt checkpoint, found {}", ck.role);
        let u = |k: &str| ck.meta[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::Format(format!("meta field {k} missing")));
        let angle_dims = serde_json::from_value(ck.meta["angle_dims"].clone()).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            n: u("n")?,
            m: u("m")?,
            k: u("k")?,
            angle_dims,
            net: ck.net("phi")?.clone(),
            chan_mean: ck.array("chan_mean")?.to_vec(),
            chan_std: ck.array("chan_std")?.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptHyper {
    pub arch: AdaptArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout: f64,
    pub chunk: usize,
    pub seed: u64,
}

impl Default for AdaptHyper {
    fn default() -> Self {
        Self { arch: AdaptArch::default(), epochs: 40, batch_size: 128, lr: 1e-3, holdout: 0.1, chunk: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub loss_curve: Vec<f64>,
    pub heldout_curve: Vec<f64>,
    pub best_epoch: usize,
    /// Held-out mean of `‖ẑ − z‖²`.
    pub heldout_mse: f64,
    /// Total variance of the held-out targets (sum over latent dims).
    pub target_var: f64,
    pub train_size: usize,
}

fn split<T>(items: &[T], holdout: f64, seed: u64) -> (Vec<&T>, Vec<&T>) {
    let mut refs: Vec<&T> = items.iter().collect();
    refs.shuffle(&mut stream(seed, "adapt-split", 0));
    let n_hold = ((items.len() as f64) * holdout).round() as usize;
    let n_hold = n_hold.min(items.len().saturating_sub(1));
    let hold = refs.split_off(items.len() - n_hold);
    (refs, hold)
}

/// Mean `‖φ(w) − z‖²` over samples.
pub fn latent_mse(phi: &AdaptModule, samples: &[&AdaptSample]) -> Result<f64> {
    ensure!(!samples.is_empty(), Contract, "latent_mse needs samples");
    let errs: Vec<f64> = crate::par::par_map(samples, |s| {
        let z = phi.infer_matrix(&s.window, s.filled)?;
        Ok::<_, Error>(z.iter().zip(&s.z_target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(mean(&errs))
}

fn target_variance(samples: &[&AdaptSample]) -> f64 {
    let d = samples[0].z_target.len();
    (0..d)
        .map(|j| {
            let v: Vec<f64> = samples.iter().map(|s| s.z_target[j]).collect();
            crate::stats::variance(&v)
        })
        .sum()
}

/// Minimizes `L^ADAPT` with Adam, keeping the epoch with the lowest
/// held-out error. `phi` is trained in place (warm start).
pub fn train_adapt(samples: &[AdaptSample], phi: &mut AdaptModule, hyper: &AdaptHyper) -> Result<AdaptReport> {
    ensure!(!samples.is_empty(), Contract, "train_adapt needs a nonempty dataset");
    ensure!(hyper.batch_size > 0 && hyper.chunk > 0, Config, "batch and chunk sizes must be positive");
    let (mut train, hold) = split(samples, hyper.holdout, hyper.seed);
    let hold = if hold.is_empty() { train.clone() } else { hold };
    phi.fit_normalizer(&train);
    let cfg = AdamConfig::with_lr(hyper.lr);
    let mut opt = OptimizerState::new(phi.net.theta.len());
    let mut best = (latent_mse(phi, &hold)?, phi.net.clone(), 0usize);
    let (mut loss_curve, mut heldout_curve) = (Vec::new(), Vec::new());
    for epoch in 0..hyper.epochs {
        train.shuffle(&mut stream(hyper.seed, "adapt-epoch", epoch as u64));
        let mut total = 0.0;
        for batch in train.chunks(hyper.batch_size) {
            let w = 1.0 / batch.len() as f64;
            let net = phi.net.clone();
            let (l, g) = chunked_grad(&[&net], batch, hyper.chunk, |tape, vars, items| {
                let s = phi.tape_adapt_loss(tape, &vars[0], items)?;
                Ok(tape.scale(s, w))
            })?;
            adam_step(&mut phi.net.theta, &g[0], &mut opt, &cfg)?;
            total += l * batch.len() as f64;
        }
        loss_curve.push(total / train.len() as f64);
        let h = latent_mse(phi, &hold)?;
        heldout_curve.push(h);
        log::debug!("adapt epoch {epoch}: train {:.4e} heldout {:.4e}", loss_curve[epoch], h);
        if h < best.0 {
            best = (h, phi.net.clone(), epoch + 1);
        }
    }
    phi.net = best.1;
    Ok(AdaptReport {
        loss_curve,
        heldout_curve,
        best_epoch: best.2,
        heldout_mse: best.0,
        target_var: target_variance(&hold),
        train_size: train.len(),
    })
}
