//! Safe deep policy adaptation: latent-conditioned control-affine dynamics,
//! history-based latent regression, few-shot fine-tuning and a robust
//! discrete-time control-barrier-function safety filter.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense matrices, small feed-forward / 1-D convolutional
//!   networks, a reverse-mode tape and the Adam optimizer.
//! * [`envs`] ground-truth control-affine simulators with configurable
//!   disturbances (pendulum, planar point robot, kinematic bicycle).
//! * [`dynlearn`] random-walk data collection and joint training of the
//!   environment encoder with the drift / actuation heads.
//! * [`policy`] latent-conditioned controllers, a REINFORCE trainer and
//!   episode rollouts.
//! * [`adapt`] the history-window adaptation network and fine-tuning.
//! * [`safeguard`] affine barriers, robust margin estimation, the CBF-QP
//!   and the assembled deployment filter.
//!
//! Data-parallel loops (episodes, minibatch gradient shards) go through
//! [`par`], which uses rayon when the `parallel` feature is enabled and
//! plain iterators otherwise. Results are identical either way.

pub mod adapt;
pub mod dynlearn;
pub mod envs;
mod error;
pub mod io;
pub mod par;
pub mod policy;
pub mod rng;
pub mod safeguard;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
