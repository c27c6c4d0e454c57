//! Robust margin from residual bounds and latent Lipschitz constants.
//!
//! For a barrier with normal `p`, the gap between the true and predicted
//! next barrier value splits into a dynamics part and a latent part:
//!
//! ```text
//! Δ1 ≤ ‖p‖∞ (ε_f + ε_g ‖a‖₁max)
//! Δ2 ≤ ‖p‖∞ ε_z ((L_f + L_fθ) + ‖a‖₁max (L_g + L_gθ))
//! ```
//!
//! with 1-norm residuals and Lipschitz constants taken with respect to the
//! latent at fixed state. `ε = Δ1 + Δ2` tightens the decay condition.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptModule, AdaptSample};
use crate::dynlearn::{DynModel, LatentDynamics, Transition};
use crate::envs::ActionSpace;
use crate::error::ensure;
use crate::rng::stream;
use crate::stats::{l1, quantile};
use crate::tensor::{Activation, DenseMatrix, NetSpec, NetworkParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMode {
    /// Sampled difference quotients: a lower estimate.
    Empirical,
    /// Product of absolute weight matrices: a valid upper bound.
    Certified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// One bound on `‖x_next − x̂_next‖₁` covering both `f` and `g` errors.
    Combined,
    /// `ε_f` from zero-action transitions, `ε_g` from the excess of the
    /// remaining residuals per unit `‖a‖₁`.
    Separate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginConfig {
    pub quantile: f64,
    pub lipschitz: LipschitzMode,
    pub residual: ResidualMode,
    /// Latent Lipschitz constants of the true `f`, `g` (configured, not estimated).
    pub l_f: f64,
    pub l_g: f64,
    pub empirical_samples: usize,
    pub seed: u64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            quantile: 1.0,
            lipschitz: LipschitzMode::Certified,
            residual: ResidualMode::Combined,
            l_f: 0.0,
            l_g: 0.0,
            empirical_samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    pub eps_f: f64,
    pub eps_g: f64,
    pub eps_z: f64,
    pub l_f: f64,
    pub l_g: f64,
    pub l_f_theta: f64,
    pub l_g_theta: f64,
    pub a_max_1: f64,
    pub quantile: f64,
    pub n_dyn: usize,
    pub n_latent: usize,
}

impl ErrorBounds {
    pub fn zero(a_max_1: f64) -> Self {
        Self {
            eps_f: 0.0,
            eps_g: 0.0,
            eps_z: 0.0,
            l_f: 0.0,
            l_g: 0.0,
            l_f_theta: 0.0,
            l_g_theta: 0.0,
            a_max_1,
            quantile: 1.0,
            n_dyn: 0,
            n_latent: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.eps_f, self.eps_g, self.eps_z, self.l_f, self.l_g, self.l_f_theta, self.l_g_theta, self.a_max_1];
        ensure!(v.iter().all(|x| x.is_finite() && *x >= 0.0), Numeric, "error bounds must be finite and nonnegative: {v:?}");
        Ok(())
    }

    /// Margin for a barrier with `‖p‖∞ = p_inf`.
    pub fn compose(&self, p_inf: f64) -> RobustMargin {
        let delta1 = p_inf * (self.eps_f + self.eps_g * self.a_max_1);
        let delta2 = p_inf * self.eps_z * ((self.l_f + self.l_f_theta) + self.a_max_1 * (self.l_g + self.l_g_theta));
        RobustMargin { eps: delta1 + delta2, delta1, delta2, p_inf }
    }

    /// Margin per unit `‖p‖∞`.
    pub fn unit_margin(&self) -> f64 {
        self.compose(1.0).eps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustMargin {
    pub eps: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub p_inf: f64,
}

/// Upper bound on the 1-norm Lipschitz constant of `row_scale ⊙ net(u)`
/// with respect to the input columns `cols`: `‖D |W_L| ⋯ |W_1[:, cols]|‖₁`.
/// Valid for activations with slope in `[0, 1]`; output is treated as a
/// flat vector. For a fusion head and latent columns the map is affine; the
/// bound is exact without the bilinear term and assumes the worst trunk
/// signs with it.
pub fn certified_lipschitz(params: &NetworkParams, cols: std::ops::Range<usize>, row_scale: &[f64]) -> Result<f64> {
    let blocks = params.blocks();
    if let NetSpec::Fusion(f) = &params.spec {
        ensure!(
            cols.start >= f.input_dim && cols.end <= f.input_dim + f.latent_dim,
            Contract,
            "fusion Lipschitz only over latent columns"
        );
        let out = blocks.last().unwrap();
        ensure!(row_scale.len() == out.out, Contract, "row scale length {} != {}", row_scale.len(), out.out);
        let t = f.trunk_dim();
        let d = f.latent_dim;
        // ∂y_r/∂z_j = W[r, t+j] + Σ_c W[r, t+d+c·d+j] h_c with |h_c| ≤ 1 under tanh.
        ensure!(
            !f.bilinear || (f.activation == Activation::Tanh && !f.hidden_dims.is_empty()),
            Contract,
            "bilinear fusion bound needs a bounded (tanh) trunk"
        );
        return Ok(cols
            .map(|c| {
                let j = c - f.input_dim;
                (0..out.out)
                    .map(|r| {
                        let w = &out.weight[r * out.inp..(r + 1) * out.inp];
                        let cross: f64 = if f.bilinear { (0..t).map(|k| w[t + d + k * d + j].abs()).sum() } else { 0.0 };
                        row_scale[r].abs() * (w[t + j].abs() + cross)
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max));
    }
    ensure!(matches!(params.spec, NetSpec::Mlp(_)), Contract, "certified Lipschitz needs an MLP or fusion net");
    let first = &blocks[0];
    ensure!(cols.end <= first.inp, Contract, "column range exceeds input width");
    let mut m = DenseMatrix::zeros(first.out, cols.len());
    for r in 0..first.out {
        for (j, c) in cols.clone().enumerate() {
            m.set(r, j, first.weight[r * first.inp + c].abs());
        }
    }
    for b in &blocks[1..] {
        let w = DenseMatrix::from_vec(b.out, b.inp, b.weight.iter().map(|v| v.abs()).collect())?;
        m = w.matmul(&m)?;
    }
    ensure!(row_scale.len() == m.rows(), Contract, "row scale length {} != {}", row_scale.len(), m.rows());
    for r in 0..m.rows() {
        let s = row_scale[r].abs();
        m.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    Ok(m.norm_1())
}

/// `(L_fθ, L_gθ)` of a learned model, certified.
pub fn certified_model_lipschitz(model: &DynModel) -> Result<(f64, f64)> {
    let start = model.feat_dim();
    let cols = start..start + model.latent_dim;
    let lf = certified_lipschitz(&model.f_head, cols.clone(), &model.norm.delta_scale)?;
    let (n, m) = (model.dims.n, model.dims.m);
    let gscale: Vec<f64> =
        (0..n * m).map(|k| model.norm.delta_scale[k / m] / model.norm.action_scale[k % m]).collect();
    let lg = certified_lipschitz(&model.g_head, cols, &gscale)?;
    Ok((lf, lg))
}

/// `(L_fθ, L_gθ)` as the largest difference quotient over sampled
/// `(x, z₁, z₂)`: `z₁ = μ(e)` for a data point and `z₂` either another
/// encoded configuration or a local perturbation of `z₁`.
pub fn empirical_model_lipschitz(model: &dyn LatentDynamics, data: &[&Transition], samples: usize, seed: u64) -> Result<(f64, f64)> {
    ensure!(!data.is_empty(), Contract, "empirical Lipschitz needs data");
    const SHARDS: usize = 16;
    let parts = crate::par::par_map_range(SHARDS, |s| {
        let mut rng = stream(seed, "lipschitz", s as u64);
        let count = samples / SHARDS + usize::from(s < samples % SHARDS);
        let (mut lf, mut lg) = (0.0f64, 0.0f64);
        for i in 0..count {
            let t = data[rng.random_range(0..data.len())];
            let z1 = model.latent(&t.e)?;
            let z2 = if i % 2 == 0 {
                model.latent(&data[rng.random_range(0..data.len())].e)?
            } else {
                z1.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect()
            };
            let dz = l1(&z1.iter().zip(&z2).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dz < 1e-9 {
                continue;
            }
            let p1 = model.predict(&t.x, &z1)?;
            let p2 = model.predict(&t.x, &z2)?;
            let df = l1(&p1.f.iter().zip(&p2.f).map(|(a, b)| a - b).collect::<Vec<_>>());
            let dg = l1(&p1.g.data().iter().zip(p2.g.data()).map(|(a, b)| a - b).collect::<Vec<_>>());
            lf = lf.max(df / dz);
            lg = lg.max(dg / dz);
        }
        Ok::<_, Error>((lf, lg))
    });
    let mut out = (0.0f64, 0.0f64);
    for p in parts {
        let (a, b) = p?;
        out = (out.0.max(a), out.1.max(b));
    }
    Ok(out)
}

/// `‖φ(window) − z_target‖₁` over samples whose window is full.
pub fn latent_residuals(phi: &AdaptModule, samples: &[AdaptSample]) -> Result<Vec<f64>> {
    let full: Vec<&AdaptSample> = samples.iter().filter(|s| s.full()).collect();
    crate::par::par_map(&full, |s| {
        let zh = phi.infer_matrix(&s.window, s.filled)?;
        Ok(l1(&zh.iter().zip(&s.z_target).map(|(a, b)| a - b).collect::<Vec<_>>()))
    })
    .into_iter()
    .collect()
}

/// Error bounds of a learned pipeline. `adapt` is `None` when the latent
/// is supplied exactly (`ε_z = 0`).
pub fn estimate_margin(
    model: &DynModel,
    adapt: Option<(&AdaptModule, &[AdaptSample])>,
    dyn_data: &[&Transition],
    space: &ActionSpace,
    cfg: &MarginConfig,
) -> Result<ErrorBounds> {
    ensure!(!dyn_data.is_empty(), Contract, "estimate_margin needs dynamics residual data");
    ensure!(cfg.quantile > 0.0 && cfg.quantile <= 1.0, Config, "quantile {} outside (0, 1]", cfg.quantile);
    let res: Vec<(f64, f64)> = crate::par::par_map(dyn_data, |t| {
        let z = model.latent(&t.e)?;
        let xh = model.predict(&t.x, &z)?.next(&t.a);
        Ok::<_, Error>((l1(&model.state_diff(&t.x_next, &xh)), l1(&t.a)))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (eps_f, eps_g) = match cfg.residual {
        ResidualMode::Combined => (quantile(&res.iter().map(|r| r.0).collect::<Vec<_>>(), cfg.quantile).unwrap(), 0.0),
        ResidualMode::Separate => {
            let zero: Vec<f64> = res.iter().filter(|r| r.1 == 0.0).map(|r| r.0).collect();
            ensure!(!zero.is_empty(), Contract, "separate residual mode needs zero-action transitions");
            let ef = quantile(&zero, cfg.quantile).unwrap();
            let per: Vec<f64> = res.iter().filter(|r| r.1 > 0.0).map(|r| (r.0 - ef).max(0.0) / r.1).collect();
            (ef, quantile(&per, cfg.quantile).unwrap_or(0.0))
        }
    };
    let (eps_z, n_latent) = match adapt {
        Some((phi, samples)) => {
            let r = latent_residuals(phi, samples)?;
            ensure!(!r.is_empty(), Contract, "estimate_margin needs full-window latent samples");
            (quantile(&r, cfg.quantile).unwrap(), r.len())
        }
        None => (0.0, 0),
    };
    let (l_f_theta, l_g_theta) = match cfg.lipschitz {
        LipschitzMode::Certified => certified_model_lipschitz(model)?,
        LipschitzMode::Empirical => empirical_model_lipschitz(model, dyn_data, cfg.empirical_samples, cfg.seed)?,
    };
    let b = ErrorBounds {
        eps_f,
        eps_g,
        eps_z,
        l_f: cfg.l_f,
        l_g: cfg.l_g,
        l_f_theta,
        l_g_theta,
        a_max_1: space.max_l1(),
        quantile: cfg.quantile,
        n_dyn: dyn_data.len(),
        n_latent,
    };
    b.validate()?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::{FusionSpec, MlpSpec};

    #[test]
    fn composition_matches_formula() {
        let b = ErrorBounds {
            eps_f: 0.1,
            eps_g: 0.2,
            eps_z: 0.3,
            l_f: 1.0,
            l_g: 2.0,
            l_f_theta: 3.0,
            l_g_theta: 4.0,
            a_max_1: 5.0,
            ..ErrorBounds::zero(5.0)
        };
        let m = b.compose(2.0);
        assert!((m.delta1 - 2.0 * (0.1 + 0.2 * 5.0)).abs() < 1e-12);
        assert!((m.delta2 - 2.0 * 0.3 * (4.0 + 5.0 * 6.0)).abs() < 1e-12);
        assert_eq!(m.eps, m.delta1 + m.delta2);
    }

    #[test]
    fn certified_bound_dominates_sampled_quotients() {
        let spec = NetSpec::Mlp(MlpSpec::new(5, vec![8, 8], 3));
        let p = NetworkParams::init(spec, &mut seeded(1)).unwrap();
        let scale = [1.0, 0.5, 2.0];
        let lc = certified_lipschitz(&p, 3..5, &scale).unwrap();
        let mut rng = seeded(2);
        for _ in 0..2000 {
            let mut u: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y1 = p.forward(&u).unwrap();
            let dz = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            u[3] += dz[0];
            u[4] += dz[1];
            let y2 = p.forward(&u).unwrap();
            let dy: f64 = y1.iter().zip(&y2).zip(&scale).map(|((a, b), s)| s * (a - b).abs()).sum();
            assert!(dy <= lc * (dz[0].abs() + dz[1].abs()) + 1e-12);
        }
    }

    #[test]
    fn fusion_bound_is_attained() {
        let spec = NetSpec::Fusion(FusionSpec {
            input_dim: 3,
            latent_dim: 2,
            hidden_dims: vec![6],
            output_dim: 3,
            activation: Activation::Tanh,
            bilinear: false,
        });
        let p = NetworkParams::init(spec, &mut seeded(3)).unwrap();
        let scale = [1.0, 0.5, 2.0];
        let lc = certified_lipschitz(&p, 3..5, &scale).unwrap();
        let u = [0.3, -1.0, 0.7, 0.1, 0.2];
        let y0 = p.forward(&u).unwrap();
        let best = (3..5)
            .map(|c| {
                let mut v = u;
                v[c] += 0.37;
                let y = p.forward(&v).unwrap();
                y0.iter().zip(&y).zip(&scale).map(|((a, b), s)| s * (a - b).abs()).sum::<f64>() / 0.37
            })
            .fold(0.0, f64::max);
        assert!((best - lc).abs() < 1e-9 * lc.max(1.0));
    }

    #[test]
    fn bilinear_bound_dominates_sampled_quotients() {
        let spec = NetSpec::Fusion(FusionSpec {
            input_dim: 3,
            latent_dim: 2,
            hidden_dims: vec![5],
            output_dim: 2,
            activation: Activation::Tanh,
            bilinear: true,
        });
        let p = NetworkParams::init(spec, &mut seeded(4)).unwrap();
        let scale = [1.5, 0.5];
        let lc = certified_lipschitz(&p, 3..5, &scale).unwrap();
        let mut rng = seeded(5);
        let mut best: f64 = 0.0;
        for _ in 0..5000 {
            let mut u: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y1 = p.forward(&u).unwrap();
            let dz = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            u[3] += dz[0];
            u[4] += dz[1];
            let y2 = p.forward(&u).unwrap();
            let q = y1.iter().zip(&y2).zip(&scale).map(|((a, b), s)| s * (a - b).abs()).sum::<f64>() / (dz[0].abs() + dz[1].abs());
            best = best.max(q);
        }
        assert!(best <= lc + 1e-12 && best > 0.3 * lc, "sampled {best} certified {lc}");
        let relu = NetSpec::Fusion(FusionSpec { activation: Activation::Relu, ..match p.spec { NetSpec::Fusion(f) => f, _ => unreachable!() } });
        let q = NetworkParams::init(relu, &mut seeded(6)).unwrap();
        assert!(certified_lipschitz(&q, 3..5, &scale).is_err());
    }
}
