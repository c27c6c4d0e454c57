//! Minimal-deviation projection onto CBF half-spaces inside the action box.
//!
//! The problem `min ‖a − a_raw‖² s.t. cᵀa ≥ b, a ∈ [lo, hi]` has the dual
//! solution `a(λ) = clip(a_raw + (λ/2) c)`, and `cᵀa(λ)` is nondecreasing
//! and piecewise linear in `λ`. Bisection over the breakpoints locates the
//! segment where the residual crosses zero; the root on that segment is
//! then solved exactly.

use serde::{Deserialize, Serialize};

use super::AffineBarrier;
use crate::dynlearn::Prediction;
use crate::envs::ActionSpace;
use crate::error::ensure;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Inactive,
    Projected,
    InfeasibleFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub a_safe: Vec<f64>,
    pub status: FilterStatus,
    /// Multiplier per barrier.
    pub lambda: Vec<f64>,
    /// Predicted `h(x̂_next)` under `a_safe`, per barrier.
    pub h_pred: Vec<f64>,
}

/// Tolerance on `cᵀa − b` below which a constraint counts as satisfied.
const FEAS_TOL: f64 = 1e-10;

fn clip_along(a_raw: &[f64], c: &[f64], lambda: f64, space: &ActionSpace) -> Vec<f64> {
    a_raw.iter().zip(c).enumerate().map(|(i, (a, ci))| (a + 0.5 * lambda * ci).clamp(space.lo[i], space.hi[i])).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Box point maximizing `cᵀa`; coordinates with `c_i = 0` keep `clip(a_raw_i)`.
pub fn box_argmax(c: &[f64], a_raw: &[f64], space: &ActionSpace) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(i, ci)| {
            if *ci > 0.0 {
                space.hi[i]
            } else if *ci < 0.0 {
                space.lo[i]
            } else {
                a_raw[i].clamp(space.lo[i], space.hi[i])
            }
        })
        .collect()
}

/// Outcome of one half-space projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub a: Vec<f64>,
    pub lambda: f64,
    pub status: FilterStatus,
}

/// Solves `min ‖a − a_raw‖² s.t. cᵀa ≥ b, a ∈ box`. When no box point
/// satisfies the constraint the box maximizer of `cᵀa` is returned.
pub fn project_halfspace(a_raw: &[f64], c: &[f64], b: f64, space: &ActionSpace) -> Result<Projection> {
    ensure!(a_raw.len() == space.dim() && c.len() == space.dim(), Contract, "projection dimension mismatch");
    ensure!(a_raw.iter().chain(c).all(|v| v.is_finite()) && b.is_finite(), Numeric, "non-finite QP data");
    let a0 = space.clip(a_raw);
    if dot(c, &a0) >= b - FEAS_TOL {
        return Ok(Projection { a: a0, lambda: 0.0, status: FilterStatus::Inactive });
    }
    let best = box_argmax(c, a_raw, space);
    if dot(c, &best) < b - FEAS_TOL {
        return Ok(Projection { a: best, lambda: f64::INFINITY, status: FilterStatus::InfeasibleFallback });
    }
    // Breakpoints where a coordinate enters or leaves its free range.
    let mut bps = vec![0.0];
    for (i, ci) in c.iter().enumerate() {
        if *ci == 0.0 {
            continue;
        }
        for bound in [space.lo[i], space.hi[i]] {
            let l = 2.0 * (bound - a_raw[i]) / ci;
            if l > 0.0 && l.is_finite() {
                bps.push(l);
            }
        }
    }
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let resid = |l: f64| dot(c, &clip_along(a_raw, c, l, space)) - b;
    // resid(bps[0]) < 0 and resid(bps[last]) ≥ 0: find the first crossing segment.
    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    if resid(bps[hi]) < 0.0 {
        // Only reachable through round-off at the feasibility edge.
        return Ok(Projection { a: best, lambda: bps[hi], status: FilterStatus::Projected });
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if resid(bps[mid]) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (l0, l1) = (bps[lo], bps[hi]);
    let (r0, r1) = (resid(l0), resid(l1));
    let lambda = if r1 > r0 { l0 + (l1 - l0) * (-r0) / (r1 - r0) } else { l1 };
    let mut a = clip_along(a_raw, c, lambda, space);
    if dot(c, &a) < b {
        // Nudge onto the feasible side to absorb round-off.
        let a1 = clip_along(a_raw, c, l1, space);
        if dot(c, &a) < b - FEAS_TOL {
            a = a1;
        }
    }
    Ok(Projection { a, lambda, status: FilterStatus::Projected })
}

/// Constraint data `(c, b)` of barrier `bar` for the tightened decay
/// condition `h(f̂ + ĝa) ≥ (1 − η) h(x) + ε`, i.e.
/// `(ĝᵀp)ᵀa ≥ (1 − η) h(x) + ε − pᵀf̂ − q`.
pub fn constraint_row(pred: &Prediction, bar: &AffineBarrier, eps: f64, h_now: f64) -> (Vec<f64>, f64) {
    let c = bar.pg(&pred.g);
    let b = (1.0 - bar.eta) * h_now + eps - bar.value(&pred.f);
    (c, b)
}

/// Single-barrier CBF-QP.
pub fn solve_cbf_qp(
    a_raw: &[f64],
    pred: &Prediction,
    bar: &AffineBarrier,
    eps: f64,
    h_now: f64,
    space: &ActionSpace,
) -> Result<FilterResult> {
    ensure!(eps >= 0.0, Contract, "margin must be nonnegative, got {eps}");
    ensure!(bar.p.len() == pred.f.len(), Contract, "barrier dimension {} != state {}", bar.p.len(), pred.f.len());
    let (c, b) = constraint_row(pred, bar, eps, h_now);
    let pr = project_halfspace(a_raw, &c, b, space)?;
    let h_pred = vec![bar.value(&pred.next(&pr.a))];
    Ok(FilterResult { a_safe: pr.a, status: pr.status, lambda: vec![pr.lambda], h_pred })
}

/// Several barriers enforced jointly by dual coordinate ascent: each round
/// re-solves the multiplier of every barrier with the others held fixed.
/// Gives up after `max_rounds` and falls back to the action maximizing the
/// smallest constraint residual (exact for scalar actions, worst barrier's
/// box maximizer otherwise).
pub fn solve_cbf_qp_multi(
    a_raw: &[f64],
    pred: &Prediction,
    bars: &[AffineBarrier],
    eps: &[f64],
    h_now: &[f64],
    space: &ActionSpace,
    max_rounds: usize,
) -> Result<FilterResult> {
    ensure!(bars.len() == eps.len() && bars.len() == h_now.len(), Contract, "barrier data length mismatch");
    ensure!(eps.iter().all(|e| *e >= 0.0), Contract, "margins must be nonnegative");
    if bars.len() == 1 {
        return solve_cbf_qp(a_raw, pred, &bars[0], eps[0], h_now[0], space);
    }
    let rows: Vec<(Vec<f64>, f64)> = bars.iter().zip(eps).zip(h_now).map(|((bar, e), h)| constraint_row(pred, bar, *e, *h)).collect();
    let finish = |a: Vec<f64>, status, lambda: Vec<f64>| {
        let xn = pred.next(&a);
        let h_pred = bars.iter().map(|b| b.value(&xn)).collect();
        FilterResult { a_safe: a, status, lambda, h_pred }
    };
    let a0 = space.clip(a_raw);
    if rows.iter().all(|(c, b)| dot(c, &a0) >= b - FEAS_TOL) {
        return Ok(finish(a0, FilterStatus::Inactive, vec![0.0; bars.len()]));
    }
    let m = space.dim();
    let mut lambda = vec![0.0; bars.len()];
    let shifted = |lambda: &[f64], skip: usize| -> Vec<f64> {
        let mut base = a_raw.to_vec();
        for (k, (c, _)) in rows.iter().enumerate() {
            if k != skip {
                for i in 0..m {
                    base[i] += 0.5 * lambda[k] * c[i];
                }
            }
        }
        base
    };
    for _ in 0..max_rounds {
        let mut infeasible = false;
        for k in 0..rows.len() {
            let base = shifted(&lambda, k);
            let (c, b) = &rows[k];
            let pr = project_halfspace(&base, c, *b, space)?;
            match pr.status {
                FilterStatus::InfeasibleFallback => {
                    infeasible = true;
                    break;
                }
                _ => lambda[k] = pr.lambda,
            }
        }
        if infeasible {
            break;
        }
        let a = clip_along(&shifted(&lambda, usize::MAX), &vec![0.0; m], 0.0, space);
        if rows.iter().all(|(c, b)| dot(c, &a) >= b - 1e-9) {
            return Ok(finish(a, FilterStatus::Projected, lambda));
        }
    }
    let a = max_min_residual(a_raw, &rows, space);
    Ok(finish(a, FilterStatus::InfeasibleFallback, vec![f64::INFINITY; bars.len()]))
}

fn max_min_residual(a_raw: &[f64], rows: &[(Vec<f64>, f64)], space: &ActionSpace) -> Vec<f64> {
    let worst = |a: &[f64]| rows.iter().map(|(c, b)| dot(c, a) - b).fold(f64::INFINITY, f64::min);
    if space.dim() == 1 {
        let (lo, hi) = (space.lo[0], space.hi[0]);
        let mut cands = vec![lo, hi];
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let (ci, bi) = (rows[i].0[0], rows[i].1);
                let (cj, bj) = (rows[j].0[0], rows[j].1);
                if (ci - cj).abs() > 0.0 {
                    let t = (bi - bj) / (ci - cj);
                    if t > lo && t < hi {
                        cands.push(t);
                    }
                }
            }
        }
        let mut best = (f64::NEG_INFINITY, lo);
        for t in cands {
            let v = worst(&[t]);
            if v > best.0 {
                best = (v, t);
            }
        }
        return vec![best.1];
    }
    let a0 = space.clip(a_raw);
    let k = (0..rows.len())
        .min_by(|&i, &j| (dot(&rows[i].0, &a0) - rows[i].1).total_cmp(&(dot(&rows[j].0, &a0) - rows[j].1)))
        .unwrap();
    box_argmax(&rows[k].0, a_raw, space)
}
