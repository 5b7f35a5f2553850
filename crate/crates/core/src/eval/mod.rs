//! Splits, model selection and the repeated-experiment protocol.

mod experiment;
mod grid;
mod metrics;
mod split;

use thiserror::Error;

pub use experiment::{
    evaluate_users, format_cell, grid_search, partition_samples, report_table, run_experiment, write_report,
    ConfigScore, ExperimentConfig, ExperimentMetadata, ExperimentReport, GridOutcome, ModelResult, Repetition,
};
pub use grid::{deepset_grid, dt_grid, knn_grid, lr_grid, mlp_grid, rf_grid, GridSpec};
pub use metrics::{accuracy, per_class_f1, weighted_f1};
pub use split::{split_dataset, split_users, SplitPlan, SPLIT_RATIOS};

use crate::learn::{LearnError, ModelKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task {task:?}: class {class:?} has {count} user(s), need at least 3")]
    TooFewUsers { task: String, class: String, count: usize },
    #[error("{0}")]
    Degenerate(String),
    #[error("empty grid for {0}")]
    EmptyGrid(ModelKind),
    #[error("every {kind} configuration failed; first error: {first_error}")]
    AllConfigsFailed { kind: ModelKind, first_error: String },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("io: {0}")]
    Io(String),
}
