//! Hypothesis tests and the attribute-vs-feature statistical battery.

mod analysis;
mod hypothesis;
pub mod special;

pub use analysis::{
    age_correlations, class_distributions, significance_matrix, significance_matrix_from_vectors,
    user_level_vectors, write_significance_csv, write_test_results_csv, ClassDistributions,
    ClassSummary, Correction, FeatureCorrelation, SignificanceMatrix, SignificanceOptions,
    TestKind, TestResult,
};
pub use hypothesis::{
    benjamini_hochberg, one_way_anova, pearson_r, quantile_sorted, student_t_test, welch_t_test,
    Anova, Correlation, TTest,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("group {group} has {len} samples, need at least 2")]
    TooFewSamples { group: usize, len: usize },
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined for constant input")]
    ConstantInput,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("task {task:?} skipped: {reason}")]
    TaskSkipped { task: String, reason: String },
    #[error("significance level {0} outside [0, 1]")]
    BadAlpha(f64),
}
