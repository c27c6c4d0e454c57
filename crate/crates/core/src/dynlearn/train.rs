use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, DynArch, DynModel, LatentDynamics, Transition};
use crate::error::ensure;
use crate::rng::stream;
use crate::stats::{l1, quantile};
use crate::tensor::{adam_step, chunked_grad, AdamConfig, OptimizerState};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynHyper {
    pub arch: DynArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Held-out fraction.
    pub holdout: f64,
    /// Samples per gradient shard.
    pub chunk: usize,
    pub e_blind: bool,
    pub seed: u64,
}

impl Default for DynHyper {
    fn default() -> Self {
        Self {
            arch: DynArch::default(),
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            holdout: 0.1,
            chunk: 64,
            e_blind: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynReport {
    /// Mean normalized training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Held-out mean squared one-step error (state units) per epoch.
    pub heldout_curve: Vec<f64>,
    /// Epoch whose parameters were kept (lowest held-out error).
    pub best_epoch: usize,
    pub heldout: DynEval,
    pub train_size: usize,
}

/// One-step residual statistics with `z = μ(e)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynEval {
    /// Mean over samples of `‖x_next − x̂_next‖²₂`.
    pub mse: f64,
    pub rmse: Vec<f64>,
    pub q99_l1: f64,
    pub max_l1: f64,
    pub count: usize,
}

/// Trains `model` on the dataset: fits the normalizer on a 90/10 split,
/// runs Adam on minibatches and keeps the epoch with the best held-out
/// error.
pub fn train_dyn(dataset: &Dataset, model: &mut DynModel, hyper: &DynHyper) -> Result<DynReport> {
    ensure!(!dataset.is_empty(), Contract, "train_dyn needs a nonempty dataset");
    ensure!(hyper.batch_size > 0 && hyper.chunk > 0, Config, "batch and chunk sizes must be positive");
    let (mut train, hold) = dataset.split(hyper.holdout, hyper.seed);
    let hold = if hold.is_empty() { train.clone() } else { hold };
    model.fit_normalizer(&train);
    let cfg = AdamConfig::with_lr(hyper.lr);
    let mut opt: Vec<OptimizerState> =
        [&model.encoder, &model.f_head, &model.g_head].iter().map(|p| OptimizerState::new(p.theta.len())).collect();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    let mut heldout_curve = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        train.shuffle(&mut stream(hyper.seed, "dyn-epoch", epoch as u64));
        let mut total = 0.0;
        for (bi, batch) in train.chunks(hyper.batch_size).enumerate() {
            let w = 1.0 / batch.len() as f64;
            let m: &DynModel = model;
            let (loss, grads) = chunked_grad(&[&m.encoder, &m.f_head, &m.g_head], batch, hyper.chunk, |tape, vars, c| {
                m.tape_dyn_loss(tape, vars, c, w)
            })
            .map_err(|e| Error::Numeric(format!("dynamics training epoch {epoch} batch {bi}: {e}")))?;
            total += loss * batch.len() as f64;
            for ((p, g), st) in [&mut model.encoder, &mut model.f_head, &mut model.g_head].into_iter().zip(&grads).zip(&mut opt) {
                adam_step(&mut p.theta, g, st, &cfg)?;
            }
        }
        let tl = total / train.len() as f64;
        ensure!(tl.is_finite(), Numeric, "dynamics training diverged at epoch {epoch}");
        loss_curve.push(tl);
        let ev = eval_dyn(model, &hold)?;
        heldout_curve.push(ev.mse);
        log::debug!("dyn epoch {epoch}: train {tl:.3e} heldout {:.3e}", ev.mse);
        if ev.mse < best.0 {
            best = (ev.mse, model.clone(), epoch);
        }
    }
    if hyper.epochs > 0 {
        *model = best.1;
    }
    let heldout = eval_dyn(model, &hold)?;
    Ok(DynReport { loss_curve, heldout_curve, best_epoch: best.2, heldout, train_size: train.len() })
}

/// Residual statistics of `model` on `items`, using the model's own
/// encoder for the latent.
pub fn eval_dyn(model: &dyn LatentDynamics, items: &[&Transition]) -> Result<DynEval> {
    ensure!(!items.is_empty(), Contract, "eval_dyn needs a nonempty dataset");
    let n = model.dims().n;
    let res: Vec<Vec<f64>> = crate::par::par_map(items, |t| {
        let z = model.latent(&t.e)?;
        let xh = model.predict(&t.x, &z)?.next(&t.a);
        Ok::<_, Error>(model.state_diff(&t.x_next, &xh))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let cnt = res.len() as f64;
    let mut sq = vec![0.0; n];
    for r in &res {
        for i in 0..n {
            sq[i] += r[i] * r[i];
        }
    }
    let l1s: Vec<f64> = res.iter().map(|r| l1(r)).collect();
    Ok(DynEval {
        mse: sq.iter().sum::<f64>() / cnt,
        rmse: sq.iter().map(|s| (s / cnt).sqrt()).collect(),
        q99_l1: quantile(&l1s, 0.99).unwrap(),
        max_l1: quantile(&l1s, 1.0).unwrap(),
        count: res.len(),
    })
}
