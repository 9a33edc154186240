//! Confusion metrics per sex, grid search, cross-validation and the
//! resampled train/test protocol.
//!
//! Percentages follow the convention that a 0/0 ratio is reported as 0 and
//! flagged. Standard deviations are population standard deviations over
//! runs or folds.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{confusion_counts, group_metrics, grouped_metrics, metrics_from_confusion, Confusion, Group, GroupMetrics, Metric, Metrics};
pub use protocol::{
    choose_config, cross_validate, cv_splits, evaluate_fitted, grid_search, mean_std, resample_evaluate, resample_evaluate_models, summarize,
    Aggregation, CvOptions, FoldScheme, Grid, GridEntry, GridResult, Protocol, ResampleOptions, RunMetrics, RunReport, SummaryCell,
};
pub use report::{format_cell, table_csv, table_header, table_markdown};
