//! Random-walk data collection and joint training of the configuration
//! encoder with the control-affine dynamics heads.

mod dataset;
mod model;
mod train;

pub use dataset::{collect_random, collect_with_mode, Dataset, Transition, COLLECT_HORIZON};
pub use model::{DynArch, DynModel, Normalizer};
pub use train::{eval_dyn, train_dyn, DynEval, DynHyper, DynReport};

use crate::envs::{wrap_angle, Dims, Env};
use crate::tensor::DenseMatrix;
use crate::Result;

/// One-step prediction `x̂' = f + g a`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub f: Vec<f64>,
    pub g: DenseMatrix,
}

impl Prediction {
    pub fn next(&self, a: &[f64]) -> Vec<f64> {
        let ga = self.g.matvec(a).expect("action length matches actuation columns");
        self.f.iter().zip(&ga).map(|(p, q)| p + q).collect()
    }
}

/// A latent-conditioned control-affine model.
pub trait LatentDynamics: Send + Sync {
    fn dims(&self) -> Dims;
    fn latent_dim(&self) -> usize;
    /// Encoder `z = μ(e)`.
    fn latent(&self, e: &[f64]) -> Result<Vec<f64>>;
    fn predict(&self, x: &[f64], z: &[f64]) -> Result<Prediction>;
    /// `a − b` with angle coordinates wrapped.
    fn state_diff(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(p, q)| p - q).collect()
    }
}

/// The simulator's own `f, g` with the identity encoder `z = e`.
#[derive(Clone, Debug)]
pub struct OracleDynamics {
    pub env: Env,
}

impl LatentDynamics for OracleDynamics {
    fn dims(&self) -> Dims {
        self.env.dims()
    }

    fn latent_dim(&self) -> usize {
        self.env.dims().k
    }

    fn latent(&self, e: &[f64]) -> Result<Vec<f64>> {
        Ok(e.to_vec())
    }

    fn predict(&self, x: &[f64], z: &[f64]) -> Result<Prediction> {
        let (f, g) = self.env.true_f_g(x, z)?;
        Ok(Prediction { f, g })
    }

    fn state_diff(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let ang = self.env.angle_dims();
        (0..a.len()).map(|i| if ang.contains(&i) { wrap_angle(a[i] - b[i]) } else { a[i] - b[i] }).collect()
    }
}
