//! Experiment harness around `safedpa`: configuration, the staged and
//! cached pipeline, baselines, and CSV emitters for sweeps, heatmaps and
//! fine-tuning reports.

pub mod cache;
pub mod config;
pub mod heatmap;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, Method};
pub use metrics::MetricsRow;
pub use pipeline::Pipeline;
