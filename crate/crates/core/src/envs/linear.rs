//! Linear system `x' = A x + B a + E e`, used as a regression and
//! filter test bed with known structure.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Combine, Constraint, Dims, SafeSetSpec};
use crate::rng::Rng;
use crate::safeguard::AffineBarrier;
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Disturbance gain; all zeros makes `e` irrelevant.
    pub e_gain: Vec<Vec<f64>>,
    pub action_max: Vec<f64>,
    pub e_mag: f64,
    pub dt: f64,
    /// Safe set `|x_0| ≤ limit`.
    pub limit: f64,
    pub collect_bound: f64,
    pub horizon: usize,
}

impl Default for LinearParams {
    fn default() -> Self {
        let dt = 0.1;
        Self {
            a: vec![vec![1.0, dt], vec![0.0, 1.0]],
            b: vec![vec![0.5 * dt * dt], vec![dt]],
            e_gain: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            action_max: vec![1.0],
            e_mag: 1.0,
            dt,
            limit: 1.0,
            collect_bound: 2.0,
            horizon: 200,
        }
    }
}

impl LinearParams {
    pub(super) fn dims(&self) -> Dims {
        Dims { n: self.a.len(), m: self.b.first().map_or(0, Vec::len), k: self.e_gain.first().map_or(0, Vec::len) }
    }

    pub(super) fn f_g(&self, x: &[f64], e: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let f = self
            .a
            .iter()
            .zip(&self.e_gain)
            .map(|(ar, er)| {
                ar.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + er.iter().zip(e).map(|(p, q)| p * q).sum::<f64>()
            })
            .collect();
        (f, DenseMatrix::from_rows(&self.b).expect("rectangular B"))
    }

    pub(super) fn safe_set(&self) -> SafeSetSpec {
        SafeSetSpec {
            label: format!("|x0| <= {}", self.limit),
            constraints: self.filter_barriers(1.0).into_iter().map(Constraint::Affine).collect(),
            combine: Combine::All,
        }
    }

    pub(super) fn filter_barriers(&self, eta: f64) -> Vec<AffineBarrier> {
        let n = self.a.len();
        let mut lo = vec![0.0; n];
        lo[0] = 1.0;
        let hi = lo.iter().map(|v| -v).collect();
        vec![AffineBarrier { p: lo, q: self.limit, eta }, AffineBarrier { p: hi, q: self.limit, eta }]
    }

    pub(super) fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.a.len()).map(|_| rng.random_range(-0.5..0.5) * self.limit).collect()
    }
}
