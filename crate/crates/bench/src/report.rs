//! Fine-tuning comparison on held-out real trajectories.

use std::fmt::Write as _;

use anyhow::{ensure, Result};
use safedpa::adapt::{one_step_errors, open_loop, tune_samples, AdaptModule, RealDataset, TuneSample};
use safedpa::dynlearn::DynModel;
use safedpa::envs::Env;
use safedpa::stats::mean;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary {
    /// Mean one-step 2-norm error over all full-window test samples.
    pub one_step_untuned: f64,
    pub one_step_tuned: f64,
    /// `one_step_untuned / one_step_tuned`.
    pub ratio: f64,
    /// Mean open-loop terminal position error over test trajectories.
    pub terminal_untuned: f64,
    pub terminal_tuned: f64,
    pub trajectories: usize,
    pub samples: usize,
}

fn position_error(dims: &[usize], a: &[f64], b: &[f64]) -> f64 {
    dims.iter().map(|&d| (a[d] - b[d]).powi(2)).sum::<f64>().sqrt()
}

/// Compares an untuned and a tuned (model, φ) pair on `test`. Returns the
/// summary and an open-loop CSV with the logged, untuned and tuned states
/// of every test trajectory.
pub fn finetune_summary(
    untuned: (&DynModel, &AdaptModule),
    tuned: (&DynModel, &AdaptModule),
    test: &RealDataset,
    warmup: usize,
) -> Result<(FinetuneSummary, String)> {
    let (s0, _) = tune_samples(test, untuned.1);
    let (s1, _) = tune_samples(test, tuned.1);
    ensure!(!s0.is_empty() && s0.len() == s1.len(), "test trajectories too short for the adaptation window");
    let r0: Vec<&TuneSample> = s0.iter().collect();
    let r1: Vec<&TuneSample> = s1.iter().collect();
    let e0 = mean(&one_step_errors(untuned.0, untuned.1, &r0)?);
    let e1 = mean(&one_step_errors(tuned.0, tuned.1, &r1)?);

    let env = Env::from_id(&test.env_id)?;
    let mut dims = env.translation_dims();
    if dims.is_empty() {
        dims = (0..test.n).collect();
    }
    let mut csv = String::from("trajectory,t");
    for tag in ["real", "untuned", "tuned"] {
        for i in 0..test.n {
            write!(csv, ",{tag}_x{i}").unwrap();
        }
    }
    csv.push('\n');
    let (mut t0, mut t1) = (vec![], vec![]);
    for (k, tj) in test.trajectories.iter().enumerate() {
        let a = open_loop(untuned.0, untuned.1, tj, warmup)?;
        let b = open_loop(tuned.0, tuned.1, tj, warmup)?;
        let last = tj.xs.last().expect("nonempty trajectory");
        t0.push(position_error(&dims, a.last().unwrap(), last));
        t1.push(position_error(&dims, b.last().unwrap(), last));
        for (t, real) in tj.xs.iter().enumerate() {
            write!(csv, "{k},{t}").unwrap();
            for v in real.iter().chain(&a[t]).chain(&b[t]) {
                write!(csv, ",{v}").unwrap();
            }
            csv.push('\n');
        }
    }
    let summary = FinetuneSummary {
        one_step_untuned: e0,
        one_step_tuned: e1,
        ratio: e0 / e1,
        terminal_untuned: mean(&t0),
        terminal_tuned: mean(&t1),
        trajectories: test.trajectories.len(),
        samples: s0.len(),
    };
    Ok((summary, csv))
}

pub fn summary_csv(s: &FinetuneSummary) -> String {
    format!(
        "metric,value\none_step_untuned,{}\none_step_tuned,{}\nratio,{}\nterminal_untuned,{}\nterminal_tuned,{}\ntrajectories,{}\nsamples,{}\n",
        s.one_step_untuned, s.one_step_tuned, s.ratio, s.terminal_untuned, s.terminal_tuned, s.trajectories, s.samples
    )
}
