use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SafeDpaRuntime;
use crate::envs::{ConfigMode, EpisodeLog};
use crate::error::ensure;
use crate::policy::{rollout, RolloutSpec};
use crate::Result;

/// Safety statistics of one disturbance direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionStats {
    pub direction_deg: f64,
    pub episodes: usize,
    /// Episodes with at least one safe-set violation.
    pub violations: usize,
    pub safety_rate: f64,
    /// Mean over episodes of the smallest safe-set margin reached.
    pub mean_h_min: f64,
    /// Fraction of steps where the filter changed the action.
    pub filter_activity: f64,
    /// Steps where some filter barrier broke `h(x') ≥ (1 − η) h(x) − tol`.
    pub decay_failures: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub rows: Vec<DirectionStats>,
    /// Per direction, per episode: the safe-set margin after every step.
    #[serde(skip)]
    pub h_traces: Vec<Vec<Vec<f64>>>,
}

impl InvarianceReport {
    pub fn total_violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "direction,episodes,violations,safety_rate,mean_h_min,filter_activity,decay_failures,steps")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                r.direction_deg, r.episodes, r.violations, r.safety_rate, r.mean_h_min, r.filter_activity, r.decay_failures, r.steps
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn decay_failures(rt: &SafeDpaRuntime<'_>, log: &EpisodeLog, eta: f64, tol: f64) -> usize {
    let mut count = 0;
    for (i, s) in log.steps.iter().enumerate() {
        let next = log.steps.get(i + 1).map_or(&log.final_x, |n| &n.x);
        let bars = rt.env.filter_barriers(&s.x, eta);
        if bars.iter().any(|b| !b.decay_holds(&s.x, next, tol)) {
            count += 1;
        }
    }
    count
}

/// Runs the runtime under a fixed disturbance in each listed direction and
/// reports per-direction safety and decay-condition statistics.
pub fn verify_invariance(
    rt: &SafeDpaRuntime<'_>,
    directions_deg: &[f64],
    episodes: usize,
    steps: usize,
    seed: u64,
    tol: f64,
) -> Result<InvarianceReport> {
    ensure!(tol >= 0.0, Contract, "tolerance must be nonnegative");
    let eta = rt.filter.map_or(0.1, |f| f.eta);
    let mut rows = Vec::with_capacity(directions_deg.len());
    let mut h_traces = Vec::with_capacity(directions_deg.len());
    for (di, &deg) in directions_deg.iter().enumerate() {
        let spec = RolloutSpec {
            mode: ConfigMode::Fixed { deg },
            episodes,
            horizon: Some(steps),
            terminate_on_violation: true,
            seed: crate::rng::derive(seed, "direction", di as u64),
        };
        let logs = rollout(rt, &spec)?;
        let violations = logs.iter().filter(|l| l.violated()).count();
        let total_steps: usize = logs.iter().map(EpisodeLog::len).sum();
        let changed: usize = logs.iter().map(|l| l.steps.iter().filter(|s| s.a_raw != s.a_safe).count()).sum();
        let h_mins: Vec<f64> =
            logs.iter().map(|l| l.steps.iter().map(|s| s.h_min).fold(f64::INFINITY, f64::min)).collect();
        rows.push(DirectionStats {
            direction_deg: deg,
            episodes,
            violations,
            safety_rate: if episodes == 0 { 1.0 } else { 1.0 - violations as f64 / episodes as f64 },
            mean_h_min: if h_mins.is_empty() { f64::NAN } else { crate::stats::mean(&h_mins) },
            filter_activity: if total_steps == 0 { 0.0 } else { changed as f64 / total_steps as f64 },
            decay_failures: logs.iter().map(|l| decay_failures(rt, l, eta, tol)).sum(),
            steps: total_steps,
        });
        h_traces.push(logs.iter().map(|l| l.steps.iter().map(|s| s.h_min).collect()).collect());
    }
    Ok(InvarianceReport { rows, h_traces })
}
