use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LatentDynamics, Prediction, Transition};
use crate::envs::{wrap_angle, Dims, Env};
use crate::error::ensure;
use crate::io::Checkpoint;
use crate::rng::Rng;
use crate::tensor::{Activation, DenseMatrix, FusionSpec, MlpSpec, NetSpec, NetVars, NetworkParams, Tape, Var};
use crate::{Error, Result};

/// Network sizes of the encoder and the two dynamics heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynArch {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
    /// Let the latent's effect on the heads vary with the state.
    pub bilinear: bool,
}

impl Default for DynArch {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            encoder_hidden: vec![64, 64],
            head_hidden: vec![64, 64],
            activation: Activation::Tanh,
            bilinear: false,
        }
    }
}

/// Affine input/output scalings fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    pub e_mean: Vec<f64>,
    pub e_std: Vec<f64>,
    /// Per-dimension scale of `x_next − x`.
    pub delta_scale: Vec<f64>,
    /// Per-dimension action scale.
    pub action_scale: Vec<f64>,
}

fn mean_std(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut s = vec![0.0; dim];
    let mut s2 = vec![0.0; dim];
    for r in rows {
        n += 1;
        for i in 0..dim {
            s[i] += r[i];
            s2[i] += r[i] * r[i];
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
    let std = s2
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let sd = (q / n - m * m).max(0.0).sqrt();
            if sd > 1e-8 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Learned model `x̂' = f̂(x, z) + ĝ(x, z) a` with encoder `z = μ(e)`.
///
/// Heads predict the state change in normalized units:
/// `f̂ = x + s ⊙ F(u)` and `ĝ_ij = s_i / σ_j · G(u)_{i m + j}`, where `u`
/// is the standardized state features (angles as sin/cos) joined with `z`,
/// `s` the delta scale and `σ` the action scale.
#[derive(Clone, Debug, PartialEq)]
pub struct DynModel {
    pub dims: Dims,
    pub latent_dim: usize,
    pub angle_dims: Vec<usize>,
    /// Coordinates left out of the head features (translation invariance).
    pub skip_dims: Vec<usize>,
    /// Encoder input forced to zero: the latent is constant and the model
    /// cannot tell configurations apart.
    pub e_blind: bool,
    pub encoder: NetworkParams,
    pub f_head: NetworkParams,
    pub g_head: NetworkParams,
    pub norm: Normalizer,
}

impl DynModel {
    pub fn new(env: &Env, arch: &DynArch, e_blind: bool, rng: &mut Rng) -> Result<Self> {
        let dims = env.dims();
        let angle_dims = env.angle_dims();
        Self::with_dims(dims, angle_dims, env.translation_dims(), env.action_space().half_width(), arch, e_blind, rng)
    }

    pub fn with_dims(
        dims: Dims,
        angle_dims: Vec<usize>,
        skip_dims: Vec<usize>,
        action_scale: Vec<f64>,
        arch: &DynArch,
        e_blind: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        ensure!(arch.latent_dim >= 1, Config, "latent_dim must be positive");
        ensure!(action_scale.len() == dims.m, Contract, "action scale length");
        ensure!(skip_dims.iter().all(|d| *d < dims.n && !angle_dims.contains(d)), Contract, "bad skipped dims {skip_dims:?}");
        let feat = dims.n - skip_dims.len() + angle_dims.len();
        let mk = |i, h: &Vec<usize>, o| NetSpec::Mlp(MlpSpec { input_dim: i, hidden_dims: h.clone(), output_dim: o, activation: arch.activation });
        let encoder = NetworkParams::init(mk(dims.k.max(1), &arch.encoder_hidden, arch.latent_dim), rng)?;
        let head = |o| {
            NetSpec::Fusion(FusionSpec {
                input_dim: feat,
                latent_dim: arch.latent_dim,
                hidden_dims: arch.head_hidden.clone(),
                output_dim: o,
                activation: arch.activation,
                bilinear: arch.bilinear,
            })
        };
        let f_head = NetworkParams::init(head(dims.n), rng)?;
        let g_head = NetworkParams::init(head(dims.n * dims.m), rng)?;
        let norm = Normalizer {
            feat_mean: vec![0.0; feat],
            feat_std: vec![1.0; feat],
            e_mean: vec![0.0; dims.k],
            e_std: vec![1.0; dims.k],
            delta_scale: vec![1.0; dims.n],
            action_scale,
        };
        Ok(Self { dims, latent_dim: arch.latent_dim, angle_dims, skip_dims, e_blind, encoder, f_head, g_head, norm })
    }

    pub fn feat_dim(&self) -> usize {
        self.dims.n - self.skip_dims.len() + self.angle_dims.len()
    }

    /// Raw features: non-angle coordinates as-is (skipped ones dropped),
    /// each angle replaced by `(sin, cos)` appended at the end.
    pub fn raw_features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feat_dim());
        for (i, v) in x.iter().enumerate() {
            if !self.angle_dims.contains(&i) && !self.skip_dims.contains(&i) {
                out.push(*v);
            }
        }
        for &i in &self.angle_dims {
            out.push(x[i].sin());
            out.push(x[i].cos());
        }
        out
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.raw_features(x);
        for ((v, m), s) in f.iter_mut().zip(&self.norm.feat_mean).zip(&self.norm.feat_std) {
            *v = (*v - m) / s;
        }
        f
    }

    pub fn encoder_input(&self, e: &[f64]) -> Vec<f64> {
        if self.e_blind || self.dims.k == 0 {
            return vec![0.0; self.dims.k.max(1)];
        }
        e.iter().zip(&self.norm.e_mean).zip(&self.norm.e_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// State change `x_next − x` (angles wrapped) divided by the delta scale.
    pub fn target(&self, x: &[f64], x_next: &[f64]) -> Vec<f64> {
        (0..self.dims.n)
            .map(|i| {
                let mut d = x_next[i] - x[i];
                if self.angle_dims.contains(&i) {
                    d = wrap_angle(d);
                }
                d / self.norm.delta_scale[i]
            })
            .collect()
    }

    pub fn scaled_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter().zip(&self.norm.action_scale).map(|(v, s)| v / s).collect()
    }

    /// Fits feature, configuration and delta statistics.
    pub fn fit_normalizer(&mut self, items: &[&Transition]) {
        let fd = self.feat_dim();
        let (fm, fs) = mean_std(items.iter().map(|t| self.raw_features(&t.x)), fd);
        self.norm.feat_mean = fm;
        self.norm.feat_std = fs;
        let (em, es) = mean_std(items.iter().map(|t| t.e.clone()), self.dims.k);
        self.norm.e_mean = em;
        self.norm.e_std = es;
        self.norm.delta_scale = vec![1.0; self.dims.n];
        let n = self.dims.n;
        let (_, ds) = mean_std(items.iter().map(|t| self.target(&t.x, &t.x_next)), n);
        self.norm.delta_scale = ds;
    }

    fn head_input(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut u = self.features(x);
        u.extend_from_slice(z);
        u
    }

    /// Converts normalized head outputs into `(f̂, ĝ)`.
    pub fn assemble(&self, x: &[f64], fo: &[f64], go: &[f64]) -> Prediction {
        let (n, m) = (self.dims.n, self.dims.m);
        let s = &self.norm.delta_scale;
        let f = (0..n).map(|i| x[i] + s[i] * fo[i]).collect();
        let mut g = DenseMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                g.set(i, j, s[i] / self.norm.action_scale[j] * go[i * m + j]);
            }
        }
        Prediction { f, g }
    }

    /// Batch tensors of `(features, encoder input, scaled action, target)`.
    pub fn batch(&self, items: &[&Transition]) -> Result<[DenseMatrix; 4]> {
        let rows = |f: &dyn Fn(&Transition) -> Vec<f64>| -> Result<DenseMatrix> {
            let r: Vec<Vec<f64>> = items.iter().map(|t| f(t)).collect();
            DenseMatrix::from_rows(&r)
        };
        Ok([
            rows(&|t| self.features(&t.x))?,
            rows(&|t| self.encoder_input(&t.e))?,
            rows(&|t| self.scaled_action(&t.a))?,
            rows(&|t| self.target(&t.x, &t.x_next))?,
        ])
    }

    /// Records the normalized residual `F(u) + G(u) ã − y` on the tape.
    pub fn tape_residual(tape: &mut Tape, f: &NetVars, g: &NetVars, feat: Var, z: Var, a: Var, y: Var) -> Result<Var> {
        let u = tape.concat_cols(feat, z)?;
        let fo = tape.forward(f, u)?;
        let go = tape.forward(g, u)?;
        let ga = tape.row_affine(go, a)?;
        let pred = tape.add(fo, ga)?;
        tape.sub(pred, y)
    }

    /// `Σ‖residual‖² · weight` for a batch, with `z = μ(e)` on the tape.
    pub fn tape_dyn_loss(&self, tape: &mut Tape, vars: &[NetVars], items: &[&Transition], weight: f64) -> Result<Var> {
        let [feat, e, a, y] = self.batch(items)?;
        let (feat, e, a, y) = (tape.leaf(feat), tape.leaf(e), tape.leaf(a), tape.leaf(y));
        let z = tape.forward(&vars[0], e)?;
        let r = Self::tape_residual(tape, &vars[1], &vars[2], feat, z, a, y)?;
        let sq = tape.square(r);
        let s = tape.sum(sq);
        Ok(tape.scale(s, weight))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new("dyn", seed)
            .with_net("encoder", &self.encoder)
            .with_net("f_head", &self.f_head)
            .with_net("g_head", &self.g_head)
            .with_array("feat_mean", &self.norm.feat_mean)
            .with_array("feat_std", &self.norm.feat_std)
            .with_array("e_mean", &self.norm.e_mean)
            .with_array("e_std", &self.norm.e_std)
            .with_array("delta_scale", &self.norm.delta_scale)
            .with_array("action_scale", &self.norm.action_scale);
        ck.meta = json!({
            "n": self.dims.n, "m": self.dims.m, "k": self.dims.k,
            "latent_dim": self.latent_dim,
            "angle_dims": self.angle_dims,
            "skip_dims": self.skip_dims,
            "e_blind": self.e_blind,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ensure!(ck.role == "dyn", Format, "expected dyn checkpoint, found {}", ck.role);
        let m = &ck.meta;
        let u = |k: &str| m[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::Format(format!("meta field {k} missing")));
        let dims = Dims { n: u("n")?, m: u("m")?, k: u("k")? };
        let angle_dims = serde_json::from_value(m["angle_dims"].clone()).map_err(|e| Error::Format(e.to_string()))?;
        let skip_dims = serde_json::from_value(m["skip_dims"].clone()).map_err(|e| Error::Format(e.to_string()))?;
        let e_blind = m["e_blind"].as_bool().ok_or_else(|| Error::Format("meta field e_blind missing".into()))?;
        let arr = |k: &str| ck.array(k).map(<[f64]>::to_vec);
        Ok(Self {
            dims,
            latent_dim: u("latent_dim")?,
            angle_dims,
            skip_dims,
            e_blind,
            encoder: ck.net("encoder")?.clone(),
            f_head: ck.net("f_head")?.clone(),
            g_head: ck.net("g_head")?.clone(),
            norm: Normalizer {
                feat_mean: arr("feat_mean")?,
                feat_std: arr("feat_std")?,
                e_mean: arr("e_mean")?,
                e_std: arr("e_std")?,
                delta_scale: arr("delta_scale")?,
                action_scale: arr("action_scale")?,
            },
        })
    }
}

impl LatentDynamics for DynModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn latent(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(&self.encoder_input(e))
    }

    fn predict(&self, x: &[f64], z: &[f64]) -> Result<Prediction> {
        ensure!(x.len() == self.dims.n, Contract, "state length {} != {}", x.len(), self.dims.n);
        ensure!(z.len() == self.latent_dim, Contract, "latent length {} != {}", z.len(), self.latent_dim);
        let u = self.head_input(x, z);
        let fo = self.f_head.forward(&u)?;
        let go = self.g_head.forward(&u)?;
        Ok(self.assemble(x, &fo, &go))
    }

    fn state_diff(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..a.len())
            .map(|i| if self.angle_dims.contains(&i) { wrap_angle(a[i] - b[i]) } else { a[i] - b[i] })
            .collect()
    }
}
