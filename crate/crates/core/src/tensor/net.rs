use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, DenseMatrix};
use crate::error::ensure;
use crate::rng::Rng;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }
}

/// Fully connected network. An empty `hidden_dims` gives an affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self { input_dim, hidden_dims, output_dim, activation: Activation::Tanh }
    }

    /// `(out, in)` of each affine block.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.input_dim >= 1 && self.output_dim >= 1 && self.hidden_dims.iter().all(|&h| h >= 1),
            Contract,
            "MLP dims must be >= 1: {self:?}"
        );
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// 1-D temporal convolution over a `(channels_in x window)` input followed by
/// a fully connected head on the channel-major flattened feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv1dSpec {
    pub channels_in: usize,
    pub window: usize,
    pub conv_layers: Vec<ConvLayer>,
    pub head_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Conv1dSpec {
    /// `(channels, width)` after each conv layer, starting with the input.
    pub fn feature_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.channels_in, self.window)];
        for l in &self.conv_layers {
            let (_, w) = *shapes.last().unwrap();
            let out_w = if w >= l.kernel && l.stride >= 1 { (w - l.kernel) / l.stride + 1 } else { 0 };
            shapes.push((l.filters, out_w));
        }
        shapes
    }

    pub fn flat_dim(&self) -> usize {
        let (c, w) = *self.feature_shapes().last().unwrap();
        c * w
    }

    fn head(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.flat_dim(),
            hidden_dims: self.head_dims.clone(),
            output_dim: self.output_dim,
            activation: self.activation,
        }
    }

    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let shapes = self.feature_shapes();
        let mut blocks: Vec<(usize, usize)> = self
            .conv_layers
            .iter()
            .zip(&shapes)
            .map(|(l, &(c, _))| (l.filters, c * l.kernel))
            .collect();
        blocks.extend(self.head().block_shapes());
        blocks
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.channels_in >= 1 && self.window >= 1, Contract, "conv input dims must be >= 1");
        for (l, &(_, w)) in self.conv_layers.iter().zip(&self.feature_shapes()) {
            ensure!(
                l.filters >= 1 && l.stride >= 1 && l.kernel >= 1 && l.kernel <= w,
                Contract,
                "conv layer {l:?} does not fit input width {w}"
            );
        }
        self.head().validate()
    }
}

/// Late-fusion head. The first `input_dim` inputs pass through an MLP trunk
/// (activation after every trunk layer); the trailing `latent_dim` inputs
/// join only at the final affine layer, so the output is affine in them.
/// With `bilinear` the final layer also sees the products of trunk units
/// and latents, which keeps the output affine in the latent at fixed input
/// while letting its effect depend on the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    #[serde(default)]
    pub bilinear: bool,
}

impl FusionSpec {
    pub fn trunk_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Width of the final layer's input: `[h, z]`, then `h ⊗ z` if bilinear.
    pub fn out_inputs(&self) -> usize {
        let t = self.trunk_dim();
        t + self.latent_dim + if self.bilinear { t * self.latent_dim } else { 0 }
    }

    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        let mut blocks: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[1], w[0])).collect();
        blocks.push((self.output_dim, self.out_inputs()));
        blocks
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.input_dim >= 1 && self.output_dim >= 1 && self.hidden_dims.iter().all(|&h| h >= 1),
            Contract,
            "fusion dims must be >= 1: {self:?}"
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetSpec {
    Mlp(MlpSpec),
    Conv1d(Conv1dSpec),
    Fusion(FusionSpec),
}

impl NetSpec {
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            NetSpec::Mlp(s) => s.block_shapes(),
            NetSpec::Conv1d(s) => s.block_shapes(),
            NetSpec::Fusion(s) => s.block_shapes(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.block_shapes().iter().map(|&(o, i)| o * i + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NetSpec::Mlp(s) => s.validate(),
            NetSpec::Conv1d(s) => s.validate(),
            NetSpec::Fusion(s) => s.validate(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            NetSpec::Mlp(s) => s.output_dim,
            NetSpec::Conv1d(s) => s.output_dim,
            NetSpec::Fusion(s) => s.output_dim,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            NetSpec::Mlp(s) => s.activation,
            NetSpec::Conv1d(s) => s.activation,
            NetSpec::Fusion(s) => s.activation,
        }
    }
}

/// Architecture plus flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: NetSpec,
    pub theta: Vec<f64>,
}

/// Borrowed view of one affine block inside `theta`.
#[derive(Clone, Copy, Debug)]
pub struct Block<'a> {
    pub out: usize,
    pub inp: usize,
    pub weight: &'a [f64],
    pub bias: &'a [f64],
}

impl NetworkParams {
    pub fn new(spec: NetSpec, theta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        ensure!(
            theta.len() == spec.param_count(),
            Contract,
            "theta length {} != parameter count {}",
            theta.len(),
            spec.param_count()
        );
        ensure!(theta.iter().all(|v| v.is_finite()), Numeric, "non-finite parameters");
        Ok(Self { spec, theta })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        let n = spec.param_count();
        Self::new(spec, vec![0.0; n])
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(spec: NetSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut theta = Vec::with_capacity(spec.param_count());
        for (out, inp) in spec.block_shapes() {
            let bound = 1.0 / (inp as f64).sqrt();
            for _ in 0..out * inp + out {
                theta.push(rng.random_range(-bound..bound));
            }
        }
        Self::new(spec, theta)
    }

    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut off = 0;
        self.spec
            .block_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let weight = &self.theta[off..off + out * inp];
                let bias = &self.theta[off + out * inp..off + out * inp + out];
                off += out * inp + out;
                Block { out, inp, weight, bias }
            })
            .collect()
    }

    /// Single-sample forward pass (MLP input vector or flattened conv window).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        match &self.spec {
            NetSpec::Mlp(s) => {
                ensure!(
                    input.len() == s.input_dim,
                    Contract,
                    "MLP input length {} != {}",
                    input.len(),
                    s.input_dim
                );
                Ok(mlp_blocks(&self.blocks(), s.activation, input.to_vec()))
            }
            NetSpec::Conv1d(s) => {
                ensure!(
                    input.len() == s.channels_in * s.window,
                    Contract,
                    "conv input length {} != {}x{}",
                    input.len(),
                    s.channels_in,
                    s.window
                );
                let blocks = self.blocks();
                let shapes = s.feature_shapes();
                let mut h = input.to_vec();
                for (li, layer) in s.conv_layers.iter().enumerate() {
                    let (c_in, w_in) = shapes[li];
                    let (_, w_out) = shapes[li + 1];
                    let b = blocks[li];
                    let mut out = vec![0.0; layer.filters * w_out];
                    for f in 0..layer.filters {
                        let wf = &b.weight[f * c_in * layer.kernel..(f + 1) * c_in * layer.kernel];
                        for j in 0..w_out {
                            let mut acc = b.bias[f];
                            for c in 0..c_in {
                                let start = c * w_in + j * layer.stride;
                                acc += dot(
                                    &wf[c * layer.kernel..(c + 1) * layer.kernel],
                                    &h[start..start + layer.kernel],
                                );
                            }
                            out[f * w_out + j] = s.activation.apply(acc);
                        }
                    }
                    h = out;
                }
                Ok(mlp_blocks(&blocks[s.conv_layers.len()..], s.activation, h))
            }
            NetSpec::Fusion(s) => {
                ensure!(
                    input.len() == s.input_dim + s.latent_dim,
                    Contract,
                    "fusion input length {} != {}+{}",
                    input.len(),
                    s.input_dim,
                    s.latent_dim
                );
                let blocks = self.blocks();
                let (trunk, out) = blocks.split_at(blocks.len() - 1);
                let mut h = input[..s.input_dim].to_vec();
                for b in trunk {
                    h = (0..b.out)
                        .map(|o| s.activation.apply(b.bias[o] + dot(&b.weight[o * b.inp..(o + 1) * b.inp], &h)))
                        .collect();
                }
                let z = &input[s.input_dim..];
                let cross: Vec<f64> =
                    if s.bilinear { h.iter().flat_map(|hc| z.iter().map(move |zj| hc * zj)).collect() } else { vec![] };
                h.extend_from_slice(z);
                h.extend(cross);
                Ok(mlp_blocks(out, s.activation, h))
            }
        }
    }

    pub fn forward_batch(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        let mut rows = Vec::with_capacity(inputs.rows());
        for r in 0..inputs.rows() {
            rows.push(self.forward(inputs.row(r))?);
        }
        if rows.is_empty() {
            return Ok(DenseMatrix::zeros(0, self.spec.output_dim()));
        }
        DenseMatrix::from_rows(&rows)
    }
}

fn mlp_blocks(blocks: &[Block<'_>], act: Activation, mut h: Vec<f64>) -> Vec<f64> {
    let last = blocks.len().saturating_sub(1);
    for (i, b) in blocks.iter().enumerate() {
        let mut out: Vec<f64> =
            (0..b.out).map(|o| b.bias[o] + dot(&b.weight[o * b.inp..(o + 1) * b.inp], &h)).collect();
        if i < last {
            out.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        h = out;
    }
    h
}

pub fn forward_mlp(params: &NetworkParams, input: &[f64]) -> Result<Vec<f64>> {
    ensure!(matches!(params.spec, NetSpec::Mlp(_)), Contract, "forward_mlp on a non-MLP network");
    params.forward(input)
}

/// Forward pass of a conv network on a `(channels_in x window)` matrix.
pub fn forward_conv1d(params: &NetworkParams, window: &DenseMatrix) -> Result<Vec<f64>> {
    let NetSpec::Conv1d(s) = &params.spec else {
        return Err(crate::Error::Contract("forward_conv1d on a non-conv network".into()));
    };
    ensure!(
        window.shape() == (s.channels_in, s.window),
        Contract,
        "window shape {:?} != ({}, {})",
        window.shape(),
        s.channels_in,
        s.window
    );
    params.forward(window.data())
}
