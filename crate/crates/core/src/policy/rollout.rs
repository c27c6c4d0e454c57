use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::envs::{check_safe, ConfigMode, ConfigSampler, EpisodeLog, StepRecord, SuccessRule, Terminal};
use crate::error::ensure;
use crate::io::{read_file, write_file};
use crate::rng::stream;
use crate::safeguard::SafeDpaRuntime;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSpec {
    pub mode: ConfigMode,
    pub episodes: usize,
    /// Steps per episode; the environment horizon when `None`.
    pub horizon: Option<usize>,
    pub terminate_on_violation: bool,
    pub seed: u64,
}

impl RolloutSpec {
    pub fn new(mode: ConfigMode, episodes: usize, seed: u64) -> Self {
        Self { mode, episodes, horizon: None, terminate_on_violation: true, seed }
    }
}

fn episode(rt: &SafeDpaRuntime<'_>, spec: &RolloutSpec, index: usize) -> Result<EpisodeLog> {
    let env = rt.env;
    let mut rng = stream(spec.seed, "episode", index as u64);
    let sampler = ConfigSampler::new(env, spec.mode, &mut rng);
    let mut s = env.reset(&mut rng);
    let mut window = rt.window();
    let safe_set = env.safe_set();
    let horizon = spec.horizon.unwrap_or_else(|| env.horizon());
    let rule = env.success_rule();
    let mut steps = Vec::with_capacity(horizon);
    let mut streak = 0usize;
    let mut terminal = Terminal::Timeout;
    for t in 0..horizon {
        let cfg = sampler.at(t, &mut rng);
        let d = rt.filter_action(&s.x, &cfg.e, &window, &mut rng)?;
        let next = env.step(&s, &d.result.a_safe, &cfg)?;
        let (ok, h_min) = check_safe(&safe_set, &next.x);
        window.push(&s.x, &d.result.a_safe)?;
        steps.push(StepRecord {
            x: s.x.clone(),
            e: cfg.e,
            a_raw: d.a_raw,
            r: env.reward(&next.x, &d.result.a_safe),
            a_safe: d.result.a_safe,
            h_min,
            violation: !ok,
        });
        s = next;
        if !ok && spec.terminate_on_violation {
            terminal = Terminal::Violation;
            break;
        }
        streak = if env.goal_reached(&s.x) { streak + 1 } else { 0 };
        match rule {
            SuccessRule::Reach if streak >= 1 => {
                terminal = Terminal::Success;
                break;
            }
            SuccessRule::Hold { steps: need } if streak >= need => {
                terminal = Terminal::Success;
                break;
            }
            _ => {}
        }
    }
    if steps.iter().any(|r| r.violation) {
        terminal = Terminal::Violation;
    }
    if let SuccessRule::FinalWindow { steps: need } = rule {
        if terminal == Terminal::Timeout && steps.len() == horizon && streak >= need.min(horizon) {
            terminal = Terminal::Success;
        }
    }
    Ok(EpisodeLog { steps, final_x: s.x, terminal })
}

/// Runs `spec.episodes` independent episodes. Episode `i` draws everything
/// from its own seeded stream, so logs do not depend on thread count.
pub fn rollout(rt: &SafeDpaRuntime<'_>, spec: &RolloutSpec) -> Result<Vec<EpisodeLog>> {
    crate::par::par_map_range(spec.episodes, |i| episode(rt, spec, i)).into_iter().collect()
}

fn terminal_code(t: Terminal) -> f64 {
    match t {
        Terminal::Success => 0.0,
        Terminal::Timeout => 1.0,
        Terminal::Violation => 2.0,
    }
}

/// Writes logs as an `.epis` container: one section per episode holding
/// `[x, e, a_raw, a_safe, r, h_min, violation]` per step followed by the
/// final state and terminal code.
pub fn save_episodes(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let dims = logs.iter().find_map(|l| l.steps.first()).map(|s| (s.x.len(), s.e.len(), s.a_raw.len()));
    let (n, k, m) = dims.unwrap_or((logs.first().map_or(0, |l| l.final_x.len()), 0, 0));
    let mut sections: Vec<Vec<f64>> = Vec::with_capacity(logs.len());
    for l in logs {
        let mut v = Vec::with_capacity(l.steps.len() * (n + k + 2 * m + 3) + n + 1);
        for s in &l.steps {
            ensure!(s.x.len() == n && s.e.len() == k && s.a_raw.len() == m, Contract, "ragged episode logs");
            v.extend(&s.x);
            v.extend(&s.e);
            v.extend(&s.a_raw);
            v.extend(&s.a_safe);
            v.extend([s.r, s.h_min, if s.violation { 1.0 } else { 0.0 }]);
        }
        v.extend(&l.final_x);
        v.push(terminal_code(l.terminal));
        sections.push(v);
    }
    let header = json!({ "n": n, "k": k, "m": m, "lens": logs.iter().map(|l| l.steps.len()).collect::<Vec<_>>() });
    let refs: Vec<&[f64]> = sections.iter().map(Vec::as_slice).collect();
    write_file(path, "epis", &header, &refs)
}

pub fn load_episodes(path: &Path) -> Result<Vec<EpisodeLog>> {
    let c = read_file(path, "epis")?;
    let u = |k: &str| c.header[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::Format(format!("missing {k}")));
    let (n, k, m) = (u("n")?, u("k")?, u("m")?);
    let lens: Vec<usize> = serde_json::from_value(c.header["lens"].clone()).map_err(|e| Error::Format(e.to_string()))?;
    ensure!(lens.len() == c.sections.len(), Format, "episode count mismatch");
    let w = n + k + 2 * m + 3;
    let mut out = Vec::with_capacity(lens.len());
    for (len, sec) in lens.iter().zip(&c.sections) {
        ensure!(sec.len() == len * w + n + 1, Format, "episode section length {} != {}", sec.len(), len * w + n + 1);
        let steps = sec[..len * w]
            .chunks(w)
            .map(|r| StepRecord {
                x: r[..n].to_vec(),
                e: r[n..n + k].to_vec(),
                a_raw: r[n + k..n + k + m].to_vec(),
                a_safe: r[n + k + m..n + k + 2 * m].to_vec(),
                r: r[w - 3],
                h_min: r[w - 2],
                violation: r[w - 1] != 0.0,
            })
            .collect();
        let tail = &sec[len * w..];
        let terminal = match tail[n] as u8 {
            0 => Terminal::Success,
            1 => Terminal::Timeout,
            2 => Terminal::Violation,
            other => return Err(Error::Format(format!("bad terminal code {other}"))),
        };
        out.push(EpisodeLog { steps, final_x: tail[..n].to_vec(), terminal });
    }
    Ok(out)
}
