//! Confusion-matrix metrics, the metrics CSV and run reports.

mod csv;
mod metrics;
mod report;

pub use csv::{csv_header, read_metrics, MetricsRow, MetricsWriter};
pub use metrics::{evaluate, ConfusionMatrix};
pub use report::{class_table, metrics_svg};
