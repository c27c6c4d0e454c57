//! Planar point robot: a double integrator pushed by an external force.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Combine, Constraint, SafeSetSpec};
use crate::rng::Rng;
use crate::safeguard::AffineBarrier;
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarParams {
    pub mass: f64,
    pub dt: f64,
    pub force_max: f64,
    /// External force magnitude, N.
    pub force_mag: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_tol: f64,
    pub goal_bonus: f64,
    pub hazard_center: [f64; 2],
    pub hazard_radius: f64,
    /// Velocity lookahead (s) of the tangent-plane barrier.
    pub tau: f64,
    /// Half-width of the square arena used during data collection.
    pub arena: f64,
    pub horizon: usize,
}

impl Default for PlanarParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            dt: 0.05,
            force_max: 1.0,
            force_mag: 0.4,
            start: [0.0, 0.0],
            goal: [1.5, 1.5],
            goal_tol: 0.3,
            goal_bonus: 10.0,
            hazard_center: [0.75, 0.75],
            hazard_radius: 0.4,
            tau: 1.0,
            arena: 3.0,
            horizon: 400,
        }
    }
}

impl PlanarParams {
    pub(super) fn f_g(&self, x: &[f64], e: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let dt = self.dt;
        let f = vec![
            x[0] + dt * x[2],
            x[1] + dt * x[3],
            x[2] + dt * e[0] / self.mass,
            x[3] + dt * e[1] / self.mass,
        ];
        let k = dt / self.mass;
        let g = DenseMatrix::from_vec(4, 2, vec![0.0, 0.0, 0.0, 0.0, k, 0.0, 0.0, k]).unwrap();
        (f, g)
    }

    fn goal_dist(&self, x: &[f64]) -> f64 {
        (x[0] - self.goal[0]).hypot(x[1] - self.goal[1])
    }

    pub(super) fn reward(&self, x: &[f64]) -> f64 {
        let d = self.goal_dist(x);
        if d <= self.goal_tol {
            self.goal_bonus - d
        } else {
            -d
        }
    }

    pub(super) fn goal_reached(&self, x: &[f64]) -> bool {
        self.goal_dist(x) <= self.goal_tol
    }

    pub(super) fn safe_set(&self) -> SafeSetSpec {
        SafeSetSpec {
            label: "outside hazard disk".into(),
            constraints: vec![Constraint::OutsideDisk {
                dims: [0, 1],
                center: self.hazard_center,
                radius: self.hazard_radius,
            }],
            combine: Combine::All,
        }
    }

    /// Half-plane tangent to the hazard at the point nearest to the robot,
    /// with a velocity lookahead: `nᵀ(pos + τ v − c) − r ≥ 0`.
    pub(super) fn filter_barriers(&self, x: &[f64], eta: f64) -> Vec<AffineBarrier> {
        let (dx, dy) = (x[0] - self.hazard_center[0], x[1] - self.hazard_center[1]);
        let d = dx.hypot(dy);
        let (nx, ny) = if d > 1e-9 { (dx / d, dy / d) } else { (1.0, 0.0) };
        let q = -(nx * self.hazard_center[0] + ny * self.hazard_center[1]) - self.hazard_radius;
        vec![AffineBarrier { p: vec![nx, ny, self.tau * nx, self.tau * ny], q, eta }]
    }

    pub(super) fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![
            self.start[0] + rng.random_range(-0.05..0.05),
            self.start[1] + rng.random_range(-0.05..0.05),
            0.0,
            0.0,
        ]
    }

    pub(super) fn reset_collect(&self, rng: &mut Rng) -> Vec<f64> {
        let a = 0.8 * self.arena;
        vec![rng.random_range(-a..a), rng.random_range(-a..a), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
    }

    pub(super) fn in_arena(&self, x: &[f64]) -> bool {
        x[0].abs() <= self.arena && x[1].abs() <= self.arena
    }
}
