//! SGD training, evaluation metrics and the experiment drivers.

pub mod experiments;
pub mod metrics;
pub mod sgd;
pub mod trainer;

pub use experiments::{
    ablation_csv, noise_csv, run_ablation, run_ablation_configs, run_noise_eval, AblationRow,
    NoiseRow,
};
pub use metrics::{
    evaluate, metric_weights, metric_weights_for_target, profile_relative_error, wmse, wr,
    EvalReport, MetricError, MetricWeights, ProfileLine, WrSummary,
};
pub use sgd::{sgd_step, OptimizerState, SgdConfig};
pub use trainer::{
    batch_tensors, mean_loss, network_for, train, train_with_progress, EpochRecord, TrainConfig,
    TrainOutcome,
};

use crate::nn::NnError;
use crate::objective::ObjectiveError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at epoch {epoch}, step {step}: {detail}")]
    NaNDetected {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
