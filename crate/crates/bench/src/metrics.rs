//! Episode statistics and their CSV forms.

use std::fmt::Write as _;

use safedpa::envs::{EpisodeLog, Terminal};
use serde::{Deserialize, Serialize};

/// Rates of one method in one condition. Rates are read from episode
/// terminal statuses only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    /// Fixed wind direction in degrees; `None` for mixed conditions.
    pub direction: Option<f64>,
    pub episodes: usize,
    pub success_rate: f64,
    pub safety_rate: f64,
    pub mean_return: f64,
}

impl MetricsRow {
    pub fn from_logs(method: &str, direction: Option<f64>, logs: &[EpisodeLog]) -> Self {
        let n = logs.len();
        let frac = |t: Terminal| {
            if n == 0 {
                0.0
            } else {
                logs.iter().filter(|l| l.terminal == t).count() as f64 / n as f64
            }
        };
        let mean_return =
            if n == 0 { 0.0 } else { logs.iter().map(EpisodeLog::total_reward).sum::<f64>() / n as f64 };
        Self {
            method: method.into(),
            direction,
            episodes: n,
            success_rate: frac(Terminal::Success),
            safety_rate: if n == 0 { 1.0 } else { 1.0 - frac(Terminal::Violation) },
            mean_return,
        }
    }
}

pub fn rows_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("method,direction,episodes,success_rate,safety_rate,mean_return\n");
    for r in rows {
        let dir = r.direction.map_or_else(|| "mixed".to_string(), |d| d.to_string());
        writeln!(s, "{},{},{},{},{},{}", r.method, dir, r.episodes, r.success_rate, r.safety_rate, r.mean_return).unwrap();
    }
    s
}

/// One line per direction, safety and success columns per method, in
/// first-appearance order of methods and directions.
pub fn polar_csv(rows: &[MetricsRow]) -> String {
    let mut methods: Vec<&str> = vec![];
    let mut dirs: Vec<f64> = vec![];
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if let Some(d) = r.direction {
            if !dirs.contains(&d) {
                dirs.push(d);
            }
        }
    }
    let mut s = String::from("direction");
    for m in &methods {
        write!(s, ",{m}_safety,{m}_success").unwrap();
    }
    s.push('\n');
    for d in dirs {
        write!(s, "{d}").unwrap();
        for m in &methods {
            match rows.iter().find(|r| r.method == *m && r.direction == Some(d)) {
                Some(r) => write!(s, ",{},{}", r.safety_rate, r.success_rate).unwrap(),
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

/// Merges rows of one method over several conditions, weighting by episodes.
pub fn pool(method: &str, rows: &[MetricsRow]) -> MetricsRow {
    let n: usize = rows.iter().map(|r| r.episodes).sum();
    let w = |f: fn(&MetricsRow) -> f64| {
        if n == 0 {
            0.0
        } else {
            rows.iter().map(|r| f(r) * r.episodes as f64).sum::<f64>() / n as f64
        }
    };
    MetricsRow {
        method: method.into(),
        direction: None,
        episodes: n,
        success_rate: w(|r| r.success_rate),
        safety_rate: if n == 0 { 1.0 } else { w(|r| r.safety_rate) },
        mean_return: w(|r| r.mean_return),
    }
}
