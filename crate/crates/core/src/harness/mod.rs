//! Experiment orchestration: configs, oracle, multi-seed runs, metrics and files.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;

pub use config::{EnvironmentConfig, ExperimentConfig, KSetting};
pub use experiment::{
    build_environment, compute_oracle, default_k, parse_k_values, run_compare_updates, run_experiment, run_sweep,
    ExperimentResult, KChoice, Oracle, Summary,
};
pub use metrics::{MeanStd, MetricRow, MetricSeries};
pub use output::{emit_comparison, emit_outputs, emit_sweep};
