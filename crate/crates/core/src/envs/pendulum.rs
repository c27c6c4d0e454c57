//! Damped inverted pendulum with wind acting on the bob.
//!
//! `θ` is measured clockwise from upright. With wind force
//! `e = (e_x, e_y)` on the bob, the clockwise torque is
//! `l (e_x cos θ − e_y sin θ)`, so the horizontal part pushes the bob
//! sideways and the vertical part acts like a change in gravity.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{wrap_angle, Combine, Constraint, SafeSetSpec, SuccessRule};
use crate::rng::Rng;
use crate::safeguard::AffineBarrier;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendulumTask {
    /// Keep `|θ| ≤ 45°`.
    Balance,
    /// Start beside a forbidden angular band and reach upright without crossing it.
    Hazard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub task: PendulumTask,
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
    pub torque_max: f64,
    /// Wind magnitude, N.
    pub wind: f64,
    pub horizon: usize,
    /// Velocity lookahead (s) in the filter barriers `θ + τ θ̇`.
    pub tau: f64,
    pub limit_deg: f64,
    pub hazard_lo_deg: f64,
    pub hazard_hi_deg: f64,
    pub start_deg: f64,
    pub goal_deg: f64,
    pub hold_steps: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            task: PendulumTask::Balance,
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.05,
            dt: 0.02,
            torque_max: 10.0,
            wind: 1.0,
            horizon: 500,
            tau: 0.5,
            limit_deg: 45.0,
            hazard_lo_deg: 5.0,
            hazard_hi_deg: 30.0,
            start_deg: 35.0,
            goal_deg: 5.0,
            hold_steps: 50,
        }
    }
}

impl PendulumParams {
    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    /// Angular acceleration without the control torque.
    pub fn drift_accel(&self, x: &[f64], e: &[f64]) -> f64 {
        let (th, om) = (x[0], x[1]);
        let wind = self.length * (e[0] * th.cos() - e[1] * th.sin());
        (self.gravity / self.length) * th.sin() + (wind - self.damping * om) / self.inertia()
    }

    pub(super) fn f_g(&self, x: &[f64], e: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let f = vec![x[0] + self.dt * x[1], x[1] + self.dt * self.drift_accel(x, e)];
        let g = DenseMatrix::column(&[0.0, self.dt / self.inertia()]);
        (f, g)
    }

    pub(super) fn reward(&self, x: &[f64], a: &[f64]) -> f64 {
        -0.1 * x[0] * x[0] - 0.1 * x[1] * x[1] - 0.0001 * a[0] * a[0]
    }

    pub(super) fn safe_set(&self) -> SafeSetSpec {
        let eta = 1.0;
        match self.task {
            PendulumTask::Balance => {
                let lim = self.limit_deg.to_radians();
                SafeSetSpec {
                    label: format!("|theta| <= {} deg", self.limit_deg),
                    constraints: vec![
                        Constraint::Affine(AffineBarrier { p: vec![-1.0, 0.0], q: lim, eta }),
                        Constraint::Affine(AffineBarrier { p: vec![1.0, 0.0], q: lim, eta }),
                    ],
                    combine: Combine::All,
                }
            }
            PendulumTask::Hazard => SafeSetSpec {
                label: format!("theta outside ({}, {}) deg", self.hazard_lo_deg, self.hazard_hi_deg),
                constraints: vec![
                    Constraint::Affine(AffineBarrier { p: vec![-1.0, 0.0], q: self.hazard_lo_deg.to_radians(), eta }),
                    Constraint::Affine(AffineBarrier { p: vec![1.0, 0.0], q: -self.hazard_hi_deg.to_radians(), eta }),
                ],
                combine: Combine::Any,
            },
        }
    }

    pub(super) fn filter_barriers(&self, x: &[f64], eta: f64) -> Vec<AffineBarrier> {
        let tau = self.tau;
        match self.task {
            PendulumTask::Balance => {
                let lim = self.limit_deg.to_radians();
                vec![
                    AffineBarrier { p: vec![-1.0, -tau], q: lim, eta },
                    AffineBarrier { p: vec![1.0, tau], q: lim, eta },
                ]
            }
            PendulumTask::Hazard => {
                let lo = self.hazard_lo_deg.to_radians();
                let hi = self.hazard_hi_deg.to_radians();
                if wrap_angle(x[0]) > 0.5 * (lo + hi) {
                    vec![AffineBarrier { p: vec![1.0, tau], q: -hi, eta }]
                } else {
                    vec![AffineBarrier { p: vec![-1.0, -tau], q: lo, eta }]
                }
            }
        }
    }

    pub(super) fn goal_reached(&self, x: &[f64]) -> bool {
        wrap_angle(x[0]).abs() < self.goal_deg.to_radians()
    }

    pub(super) fn success_rule(&self) -> SuccessRule {
        match self.task {
            PendulumTask::Balance => SuccessRule::FinalWindow { steps: self.hold_steps },
            PendulumTask::Hazard => SuccessRule::Hold { steps: self.hold_steps },
        }
    }

    pub(super) fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        match self.task {
            PendulumTask::Balance => {
                let th = rng.random_range(-5f64..5.0).to_radians();
                vec![th, rng.random_range(-0.2..0.2)]
            }
            PendulumTask::Hazard => vec![self.start_deg.to_radians(), 0.0],
        }
    }

    pub(super) fn reset_collect(&self, rng: &mut Rng) -> Vec<f64> {
        match self.task {
            PendulumTask::Balance => {
                let lim = 0.9 * self.limit_deg.to_radians();
                vec![rng.random_range(-lim..lim), rng.random_range(-1.5..1.5)]
            }
            PendulumTask::Hazard => {
                let lo = self.hazard_lo_deg.to_radians();
                let hi = self.hazard_hi_deg.to_radians();
                loop {
                    let th = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    if th <= lo || th >= hi {
                        return vec![th, rng.random_range(-4.0..4.0)];
                    }
                }
            }
        }
    }
}

/// Mechanical energy with the upright position as the potential maximum.
pub fn pendulum_energy(p: &PendulumParams, x: &[f64]) -> f64 {
    0.5 * p.inertia() * x[1] * x[1] + p.mass * p.gravity * p.length * x[0].cos()
}


#[cfg(test)]
mod tests {
    use super::super::{check_safe, Env};
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn env() -> (Env, PendulumParams) {
        let p = PendulumParams::default();
        (Env::Pendulum(p.clone()), p)
    }

    #[test]
    fn upright_equilibrium() {
        let (env, _) = env();
        assert_eq!(env.step_x(&[0.0, 0.0], &[0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn wind_at_zero_degrees_adds_expected_rate() {
        let (env, p) = env();
        let w = 0.7;
        let next = env.step_x(&[0.0, 0.0], &[0.0], &[w, 0.0]).unwrap();
        let expected = p.dt * w * p.length / (p.mass * p.length * p.length);
        assert!((next[1] - expected).abs() < 1e-15);
        assert_eq!(next[0], 0.0);
    }

    #[test]
    fn actuation_column() {
        let (env, p) = env();
        let (_, g) = env.true_f_g(&[0.3, -0.2], &[0.1, 0.4]).unwrap();
        assert_eq!(g.shape(), (2, 1));
        assert_eq!(g.get(0, 0), 0.0);
        assert!((g.get(1, 0) - p.dt / (p.mass * p.length * p.length)).abs() < 1e-15);
    }

    #[test]
    fn reward_values() {
        let (env, _) = env();
        assert_eq!(env.reward(&[0.0, 0.0], &[0.0]), 0.0);
        assert!((env.reward(&[1.0, 0.0], &[0.0]) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn balance_safe_set() {
        let (env, _) = env();
        let s = env.safe_set();
        let (ok, h) = check_safe(&s, &[0.0, 0.0]);
        assert!(ok);
        assert!((h - FRAC_PI_4).abs() < 1e-15);
        assert!(!check_safe(&s, &[46f64.to_radians(), 0.0]).0);
        assert!(check_safe(&s, &[45f64.to_radians(), 0.0]).0);
        assert!(!check_safe(&s, &[-46f64.to_radians(), 0.0]).0);
    }

    #[test]
    fn hazard_band() {
        let env = Env::from_id("pendulum_hazard").unwrap();
        let s = env.safe_set();
        assert!(check_safe(&s, &[35f64.to_radians(), 0.0]).0);
        assert!(!check_safe(&s, &[20f64.to_radians(), 0.0]).0);
        assert!(check_safe(&s, &[0.0, 0.0]).0);
        assert!(check_safe(&s, &[-170f64.to_radians(), 0.0]).0);
    }

    #[test]
    fn filter_barriers_contain_criterion_set() {
        let (env, _) = env();
        for th in [-0.7, 0.0, 0.5] {
            for om in [-1.0, 0.0, 1.0] {
                let x = [th, om];
                let bs = env.filter_barriers(&x, 0.1);
                if bs.iter().all(|b| b.value(&x) >= 0.0) {
                    assert!(check_safe(&env.safe_set(), &x).0);
                }
            }
        }
    }

    #[test]
    fn energy_drift_matches_damping_and_integration_order() {
        let (env, p) = env();
        let mut x = vec![0.4, 0.0];
        for _ in 0..50 {
            let next = env.step_x(&x, &[0.0], &[0.0, 0.0]).unwrap();
            let de = pendulum_energy(&p, &next) - pendulum_energy(&p, &x);
            let damping_work = -p.damping * x[1] * x[1] * p.dt;
            // explicit Euler error is second order in dt
            let scale = 1.0 + x[1] * x[1] + p.gravity;
            assert!((de - damping_work).abs() <= 2.0 * p.dt * p.dt * scale * p.gravity, "{de} vs {damping_work}");
            x = next;
        }
    }

    #[test]
    fn angles_stay_wrapped() {
        let (env, _) = env();
        let mut x = vec![3.1, 8.0];
        for _ in 0..200 {
            x = env.step_x(&x, &[10.0], &[1.0, 0.0]).unwrap();
            assert!(x[0] > -std::f64::consts::PI && x[0] <= std::f64::consts::PI);
        }
    }
}
