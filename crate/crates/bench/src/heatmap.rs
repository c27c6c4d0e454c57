//! One-step barrier change `Δh(x, a) = h(f̂ + ĝa) − h(x)` over a 2-D action grid.

use std::fmt::Write as _;

use anyhow::{ensure, Result};
use safedpa::dynlearn::LatentDynamics;
use safedpa::envs::{ActionSpace, Env};
use safedpa::stats::pearson;

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub method: String,
    pub axis0: Vec<f64>,
    pub axis1: Vec<f64>,
    /// Row-major: index `i * axis1.len() + j` holds `(axis0[i], axis1[j])`.
    pub delta_h: Vec<f64>,
}

impl Heatmap {
    /// Pearson correlation of two grids over the same axes; `None` when one is flat.
    pub fn correlation(&self, other: &Heatmap) -> Option<f64> {
        assert_eq!((&self.axis0, &self.axis1), (&other.axis0, &other.axis1), "grids differ");
        pearson(&self.delta_h, &other.delta_h)
    }
}

pub fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

/// `Δh` of `model` with latent `z` at state `x`. With several barriers `h`
/// is their minimum at `x`'s barrier set.
pub fn delta_h_grid(
    method: &str,
    env: &Env,
    model: &dyn LatentDynamics,
    z: &[f64],
    x: &[f64],
    eta: f64,
    n: usize,
) -> Result<Heatmap> {
    let space: ActionSpace = env.action_space();
    ensure!(space.dim() == 2, "heatmaps need a 2-D action space; {} has {}", env.id(), space.dim());
    ensure!(n >= 2, "grid needs at least 2 points per axis");
    let bars = env.filter_barriers(x, eta);
    ensure!(!bars.is_empty(), "{} has no filter barriers", env.id());
    let h = |s: &[f64]| bars.iter().map(|b| b.value(s)).fold(f64::INFINITY, f64::min);
    let h_now = h(x);
    let pred = model.predict(x, z)?;
    let (axis0, axis1) = (axis(space.lo[0], space.hi[0], n), axis(space.lo[1], space.hi[1], n));
    let mut delta_h = Vec::with_capacity(n * n);
    for a0 in &axis0 {
        for a1 in &axis1 {
            delta_h.push(h(&pred.next(&[*a0, *a1])) - h_now);
        }
    }
    Ok(Heatmap { method: method.into(), axis0, axis1, delta_h })
}

pub fn heatmap_csv(maps: &[Heatmap]) -> String {
    let mut s = String::from("method,a0,a1,delta_h\n");
    for m in maps {
        for (i, a0) in m.axis0.iter().enumerate() {
            for (j, a1) in m.axis1.iter().enumerate() {
                writeln!(s, "{},{a0},{a1},{}", m.method, m.delta_h[i * m.axis1.len() + j]).unwrap();
            }
        }
    }
    s
}

/// Correlation of every map with `reference`; blank when undefined.
pub fn summary_csv(reference: &Heatmap, maps: &[Heatmap]) -> String {
    let mut s = format!("method,pearson_vs_{}\n", reference.method);
    for m in maps {
        let c = m.correlation(reference).map_or_else(String::new, |c| c.to_string());
        writeln!(s, "{},{c}", m.method).unwrap();
    }
    s
}
