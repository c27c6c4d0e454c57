//! Controllers that pick a desired next value for the actuated state rows
//! and solve `f̂ + ĝ a ≈ target` for `a` by least squares. Wind, drag and
//! other configuration effects are compensated through `f̂(x, z)`.

use crate::dynlearn::Prediction;
use crate::envs::{pendulum_energy, wrap_angle, ActionSpace, Env, PendulumTask};
use crate::Result;

const BALANCE_KP: f64 = 25.0;
const BALANCE_KD: f64 = 10.0;
// Underdamped catch: fast, and overshoots past upright when unfiltered.
const CATCH_KP: f64 = 100.0;
const CATCH_KD: f64 = 4.0;
const SWING_K: f64 = 5.0;
const SWING_SURPLUS: f64 = 0.5;
const PLANAR_KP: f64 = 1.0;
const PLANAR_KD: f64 = 1.6;
const PLANAR_ACCEL_MAX: f64 = 0.6;
const CAR_KV: f64 = 1.0;
const CAR_V_MAX: f64 = 1.0;
const CAR_KPSI: f64 = 3.0;

/// Least-squares `a` with `(f̂ + ĝ a)[rows] ≈ target`, clipped to the box.
pub fn invert_rows(pred: &Prediction, rows: &[usize], target: &[f64], space: &ActionSpace) -> Vec<f64> {
    let m = pred.g.cols();
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for (&r, &t) in rows.iter().zip(target) {
        let g = pred.g.row(r);
        let d = t - pred.f[r];
        for i in 0..m {
            atb[i] += g[i] * d;
            for j in 0..m {
                ata[i][j] += g[i] * g[j];
            }
        }
    }
    let ridge = 1e-9 * (0..m).map(|i| ata[i][i]).sum::<f64>().max(1e-12);
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] += ridge;
    }
    space.clip(&solve_small(ata, atb))
}

/// Gaussian elimination with partial pivoting on a small SPD system.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let m = b.len();
    for c in 0..m {
        let p = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        if a[c][c].abs() < 1e-300 {
            continue;
        }
        for r in c + 1..m {
            let f = a[r][c] / a[c][c];
            for k in c..m {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; m];
    for c in (0..m).rev() {
        let s: f64 = (c + 1..m).map(|k| a[c][k] * x[k]).sum();
        x[c] = if a[c][c].abs() < 1e-300 { 0.0 } else { (b[c] - s) / a[c][c] };
    }
    x
}

pub(super) fn act(env: &Env, x: &[f64], pred: &Prediction, space: &ActionSpace) -> Result<Vec<f64>> {
    Ok(match env {
        Env::Pendulum(p) => {
            let (th, om) = (wrap_angle(x[0]), x[1]);
            let pd = |kp: f64, kd: f64| invert_rows(pred, &[1], &[om + p.dt * (-kp * th - kd * om)], space);
            match p.task {
                PendulumTask::Balance => pd(BALANCE_KP, BALANCE_KD),
                PendulumTask::Hazard => {
                    let mid = 0.5 * (p.hazard_lo_deg + p.hazard_hi_deg).to_radians();
                    if th > -std::f64::consts::FRAC_PI_2 && th < mid {
                        pd(CATCH_KP, CATCH_KD)
                    } else {
                        // Pump energy clockwise, the long way around to upright.
                        let target = p.mass * p.gravity * p.length + SWING_SURPLUS;
                        let u = if om >= 0.0 { SWING_K * (target - pendulum_energy(p, x)) } else { 0.5 * p.torque_max };
                        space.clip(&[u])
                    }
                }
            }
        }
        Env::Planar(p) => {
            let mut acc = [0.0; 2];
            for i in 0..2 {
                acc[i] = PLANAR_KP * (p.goal[i] - x[i]) - PLANAR_KD * x[2 + i];
            }
            let norm = acc[0].hypot(acc[1]);
            if norm > PLANAR_ACCEL_MAX {
                acc.iter_mut().for_each(|v| *v *= PLANAR_ACCEL_MAX / norm);
            }
            invert_rows(pred, &[2, 3], &[x[2] + p.dt * acc[0], x[3] + p.dt * acc[1]], space)
        }
        Env::Bicycle(p) => {
            let (dx, dy) = (p.goal[0] - x[0], p.goal[1] - x[1]);
            let v_des = (CAR_KV * dx.hypot(dy)).min(CAR_V_MAX);
            let dpsi = wrap_angle(dy.atan2(dx) - x[2]);
            invert_rows(pred, &[3, 2], &[v_des, x[2] + p.dt * CAR_KPSI * dpsi], space)
        }
        Env::Linear(_) => space.center(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseMatrix;

    #[test]
    fn exact_inverse_when_square() {
        let pred = Prediction { f: vec![1.0, 2.0], g: DenseMatrix::from_vec(2, 2, vec![2.0, 0.0, 1.0, 1.0]).unwrap() };
        let a = invert_rows(&pred, &[0, 1], &[2.0, 2.5], &ActionSpace::symmetric(&[10.0, 10.0]));
        assert!((a[0] - 0.5).abs() < 1e-8 && a[1].abs() < 1e-8, "{a:?}");
    }
}
