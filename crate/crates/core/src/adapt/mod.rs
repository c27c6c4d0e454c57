//! Latent regression from state-action history and few-shot fine-tuning.

mod collect;
mod finetune;
mod module;
mod window;

pub use collect::{collect_adapt, samples_from_log, train_adapt_dagger, DaggerSpec};
pub use finetune::{
    collect_real_circles, finetune, one_step_errors, open_loop, tape_tune_loss, tune_samples, RealDataset,
    RealTrajectory, TuneHyper, TuneReport, TuneSample,
};
pub use module::{latent_mse, train_adapt, AdaptArch, AdaptHyper, AdaptModule, AdaptReport, AdaptSample};
pub use window::HistoryWindow;
