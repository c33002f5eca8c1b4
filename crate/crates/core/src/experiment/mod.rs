//! Training, evaluation, gradient verification and the filter-size ×
//! stride × learning-rate sweep.

mod config;
mod gradcheck;
mod sweep;
mod train;

pub use config::{architecture_spec, Architecture, ArchitectureParams, ExperimentConfig};
pub use gradcheck::{gradient_check, reduced_spec, GradientCheckReport, LayerCheck, EPSILON, REDUCED_INPUT, TOLERANCE};
pub use sweep::{
    default_grid, load_outcomes, parse_grid, runs_dir, summarize, summary_csv, summary_json, sweep, FailedRun,
    RunOutcome, SummaryRow, SweepCell, SweepOptions, SUMMARY_HEADER,
};
pub use train::{confusion_error_pct, evaluate, train, EpochMetrics, Evaluation, MetricsReport, TrainedRun};
