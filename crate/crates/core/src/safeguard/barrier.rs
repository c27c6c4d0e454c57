use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::tensor::DenseMatrix;
use crate::Result;

/// `h(x) = pᵀx + q` with decay rate `eta` in `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineBarrier {
    pub p: Vec<f64>,
    pub q: f64,
    pub eta: f64,
}

impl AffineBarrier {
    pub fn new(p: Vec<f64>, q: f64, eta: f64) -> Result<Self> {
        ensure!(p.iter().any(|v| *v != 0.0), Contract, "barrier normal must be nonzero");
        ensure!(p.iter().all(|v| v.is_finite()) && q.is_finite(), Numeric, "non-finite barrier");
        ensure!(eta > 0.0 && eta <= 1.0, Contract, "eta {eta} outside (0, 1]");
        Ok(Self { p, q, eta })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.p.len());
        self.p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.q
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { p: self.p.iter().map(|v| v * c).collect(), q: self.q * c, eta: self.eta }
    }

    /// `‖p‖∞`, the factor multiplying 1-norm state residuals in the margin.
    pub fn p_inf(&self) -> f64 {
        self.p.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `pᵀ g` as a vector over action dimensions.
    pub fn pg(&self, g: &DenseMatrix) -> Vec<f64> {
        g.tmatvec(&self.p).expect("barrier / actuation dimension mismatch")
    }

    /// Discrete decay condition `h(x_next) ≥ (1 − η) h(x) − tol`.
    pub fn decay_holds(&self, x: &[f64], x_next: &[f64], tol: f64) -> bool {
        self.value(x_next) >= (1.0 - self.eta) * self.value(x) - tol
    }
}

/// Convenience for free-function style call sites.
pub fn barrier_value(b: &AffineBarrier, x: &[f64]) -> f64 {
    b.value(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn upright_pendulum_distance_to_limit() {
        let b = AffineBarrier::new(vec![-1.0, 0.0], FRAC_PI_4, 0.1).unwrap();
        assert!((barrier_value(&b, &[0.0, 3.0]) - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(b.value(&[FRAC_PI_4, 0.0]), 0.0);
    }

    #[test]
    fn scaling_is_linear() {
        let b = AffineBarrier::new(vec![0.3, -2.0], 0.7, 0.5).unwrap();
        let x = [1.3, 0.2];
        assert!((b.scaled(2.5).value(&x) - 2.5 * b.value(&x)).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(AffineBarrier::new(vec![0.0, 0.0], 1.0, 0.1).is_err());
        assert!(AffineBarrier::new(vec![1.0], 1.0, 0.0).is_err());
        assert!(AffineBarrier::new(vec![1.0], 1.0, 1.5).is_err());
    }
}
