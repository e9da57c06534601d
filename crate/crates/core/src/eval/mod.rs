//! Training, evaluation, Monte Carlo cross-validation, and reporting.

pub mod mccv;
pub mod metrics;
pub mod report;
pub mod train;

pub use mccv::{run_mccv, MccvConfig, MccvResult, ModelFactory, RepetitionResult, METRIC_NAMES};
pub use metrics::{argmax, compute_metrics, confusion_from_labels, ConfusionMatrix, MetricsReport};
pub use train::{
    evaluate, evaluate_node, train, FeatureCache, LearningCurve, TrainConfig, TrainOutcome,
    TrainingRegime,
};
