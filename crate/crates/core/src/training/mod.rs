//! Windowing, normalization, Adam, early stopping and masked metrics.

mod adam;
mod dataset;
mod metrics;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dataset::{make_windows, num_windows, Dataset, NodeStats, SplitFractions, Splits, STD_GUARD};
pub use metrics::{evaluate, evaluate_horizons, HorizonMetrics, Metrics, MetricsReport, MAPE_FLOOR};
pub use trainer::{
    evaluate_dataset, masked_mae, predict_dataset, train, EpochRecord, History, TrainConfig, TrainOutcome,
};
