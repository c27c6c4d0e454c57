//! Affine control barrier functions, the robust margin, the CBF-QP filter
//! and the assembled deployment runtime.

mod barrier;
mod margin;
mod qp;
mod runtime;
mod verify;

pub use barrier::{barrier_value, AffineBarrier};
pub use margin::{
    certified_lipschitz, certified_model_lipschitz, empirical_model_lipschitz, estimate_margin, latent_residuals,
    ErrorBounds, LipschitzMode, MarginConfig, ResidualMode, RobustMargin,
};
pub use qp::{
    box_argmax, constraint_row, project_halfspace, solve_cbf_qp, solve_cbf_qp_multi, FilterResult, FilterStatus,
    Projection,
};
pub use runtime::{Decision, LatentSource, SafeDpaRuntime, SafeFilter};
pub use verify::{verify_invariance, InvarianceReport, DirectionStats};
