//! Minimal differentiable-computation core.
//!
//! Values are row-major `f64` matrices. Networks store all parameters in one
//! flat vector (`NetworkParams::theta`) laid out block by block as
//! `weight (out x in, row-major)` followed by `bias (out)`.

mod matrix;
mod net;
mod optim;
mod tape;

pub use matrix::DenseMatrix;
pub use net::{
    forward_conv1d, forward_mlp, Activation, Conv1dSpec, ConvLayer, FusionSpec, MlpSpec, NetSpec,
    NetworkParams,
};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use tape::{chunked_grad, grad, grad_many, Grads, NetVars, Tape, Var};
