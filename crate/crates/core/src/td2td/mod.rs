//! Touchdown-to-touchdown reachability: grid datasets of one-step errors
//! from fixed reset states, a grid regressor over them, and set-size
//! analytics.

mod dataset;
mod grid;
mod model;
mod stats;

pub use dataset::{
    collect_dataset, collect_episode, collect_sample, label_count, measure_command, settle, CollectionReport, Dataset,
    DatasetSize, LabeledSample, SettledState, DATASET_MAGIC, DATASET_VERSION, SETTLE_TOUCHDOWNS,
};
pub use grid::{reachable_set_size, GridSpec, ReachabilityGrid, REACHABLE_THRESHOLD};
pub use model::{
    evaluate_mse, per_cell_variance, split_indices, train_model, ModelReport, ModelTrainConfig, ReachabilityModel,
    FALL_IMPUTE, MODEL_KIND,
};
pub use stats::{bin_by_velocity, default_speed_edges, quantile, VelocityBin};

#[cfg(test)]
mod tests;
