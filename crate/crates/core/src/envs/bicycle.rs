//! Kinematic bicycle with a first-order speed loop and a drag force.
//!
//! State `(p_x, p_y, ψ, v)`, action `(v_cmd, δ)`. The speed follows the
//! command through a lag, position integrates the updated speed, and the
//! yaw rate uses the current speed with an understeer gradient. The drag
//! force `e` decelerates along the heading and pushes the body sideways.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Combine, Constraint, SafeSetSpec};
use crate::rng::Rng;
use crate::safeguard::AffineBarrier;
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BicycleParams {
    pub real: bool,
    pub dt: f64,
    pub wheelbase: f64,
    pub mass: f64,
    /// Speed-loop time constant, s.
    pub speed_lag: f64,
    /// Understeer gradient `K` in `v δ / (L (1 + K v²))`.
    pub understeer: f64,
    pub speed_max: f64,
    pub steer_max: f64,
    /// Drag force magnitude, N.
    pub drag: f64,
    pub goal: [f64; 2],
    pub goal_tol: f64,
    pub arena: f64,
    pub horizon: usize,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self::sim()
    }
}

impl BicycleParams {
    pub fn sim() -> Self {
        Self {
            real: false,
            dt: 0.05,
            wheelbase: 0.3,
            mass: 1.0,
            speed_lag: 0.3,
            understeer: 0.0,
            speed_max: 2.0,
            steer_max: 0.5,
            drag: 0.5,
            goal: [2.0, 1.0],
            goal_tol: 0.3,
            arena: 3.0,
            horizon: 300,
        }
    }

    /// Heavier, slower speed loop, understeering and without drag.
    pub fn real() -> Self {
        let s = Self::sim();
        Self {
            real: true,
            mass: s.mass * 1.4,
            speed_lag: s.speed_lag * 1.5,
            understeer: 0.5,
            drag: 0.0,
            ..s
        }
    }

    pub(super) fn f_g(&self, x: &[f64], e: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let dt = self.dt;
        let (c, s) = (x[2].cos(), x[2].sin());
        let v = x[3];
        let e_long = e[0] * c + e[1] * s;
        let (e_lat_x, e_lat_y) = (e[0] - e_long * c, e[1] - e_long * s);
        let k = dt / self.speed_lag;
        // v' = v + k (v_cmd − v) − dt e_long / m
        let v_drift = v - k * v - dt * e_long / self.mass;
        let yaw_gain = dt * v / (self.wheelbase * (1.0 + self.understeer * v * v));
        let f = vec![
            x[0] + dt * v_drift * c - dt * dt * e_lat_x / self.mass,
            x[1] + dt * v_drift * s - dt * dt * e_lat_y / self.mass,
            x[2],
            v_drift,
        ];
        let g = DenseMatrix::from_vec(4, 2, vec![dt * k * c, 0.0, dt * k * s, 0.0, 0.0, yaw_gain, k, 0.0]).unwrap();
        (f, g)
    }

    fn goal_dist(&self, x: &[f64]) -> f64 {
        (x[0] - self.goal[0]).hypot(x[1] - self.goal[1])
    }

    pub(super) fn reward(&self, x: &[f64]) -> f64 {
        -self.goal_dist(x)
    }

    pub(super) fn goal_reached(&self, x: &[f64]) -> bool {
        self.goal_dist(x) <= self.goal_tol
    }

    fn walls(&self, eta: f64) -> Vec<AffineBarrier> {
        let a = self.arena;
        vec![
            AffineBarrier { p: vec![-1.0, 0.0, 0.0, 0.0], q: a, eta },
            AffineBarrier { p: vec![1.0, 0.0, 0.0, 0.0], q: a, eta },
            AffineBarrier { p: vec![0.0, -1.0, 0.0, 0.0], q: a, eta },
            AffineBarrier { p: vec![0.0, 1.0, 0.0, 0.0], q: a, eta },
        ]
    }

    pub(super) fn safe_set(&self) -> SafeSetSpec {
        SafeSetSpec {
            label: "inside arena".into(),
            constraints: self.walls(1.0).into_iter().map(Constraint::Affine).collect(),
            combine: Combine::All,
        }
    }

    pub(super) fn filter_barriers(&self, eta: f64) -> Vec<AffineBarrier> {
        self.walls(eta)
    }

    pub(super) fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.1..0.1), 0.0]
    }

    pub(super) fn reset_collect(&self, rng: &mut Rng) -> Vec<f64> {
        let a = 0.7 * self.arena;
        vec![
            rng.random_range(-a..a),
            rng.random_range(-a..a),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(0.0..self.speed_max),
        ]
    }

    pub(super) fn in_arena(&self, x: &[f64]) -> bool {
        x[0].abs() <= self.arena && x[1].abs() <= self.arena
    }
}
