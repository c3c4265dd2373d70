//! Experiment configuration, presets, runner, and metrics files.

mod config;
mod experiment;
mod metrics;

pub use config::{
    parse_override, parse_overrides_toml, preset, ConfigOverrides, DatasetKind, ExperimentConfig,
    OptimizerName, OUT_DIR_ENV, PRESETS,
};
pub use experiment::{
    build_partition, load_data, partition_report, run_experiment, run_experiment_in, Experiment,
    PartitionReport, RunPaths, RunSummary,
};
pub use metrics::{
    compare_runs, format_comparison, read_metrics, ComparisonRow, MetricsRow, MetricsWriter,
    METRICS_HEADER,
};
