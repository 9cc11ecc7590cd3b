//! Optimizer, epoch loop, full-ranking evaluation and early stopping.

mod fit;
mod metrics;
mod optimizer;

pub use fit::{fit, load_model, train_epoch, FitOutcome, RunFiles, TrainConfig};
pub use metrics::{evaluate, rank_of_target, MetricsReport, TiePolicy};
pub use optimizer::{OptimConfig, OptimizerState};
