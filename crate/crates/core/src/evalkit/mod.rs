//! Ground-truth-aware measurements. Nothing here feeds back into training.

mod metrics;
mod report;

pub use metrics::{
    accuracy, pseudo_label_metrics, selection_metrics, test_accuracy, AccuracyLog, PseudoLabelMetrics,
    SelectionMetrics,
};
pub use report::{
    aggregate_runs, emit_reports, read_metrics, write_summary_csv, LossRow, MetricsRow, RunSummary, LOSSES_FILE,
    METRICS_FILE,
};
