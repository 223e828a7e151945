//! Experiment orchestration: configuration, runs, recover-round sweeps and
//! metric files.

mod config;
mod emit;
mod run;

pub use config::{DatasetSpec, ExperimentConfig, PartitionSpec};
pub use emit::{emit_run, emit_sweep, format_number, metrics_csv, summary_csv, METRICS_HEADER, SUMMARY_HEADER};
pub use run::{
    build_partitions, run_experiment, run_experiment_with_data, sweep_recover_rounds, RunRecord, Sweep,
    SweepRow, SweepSummary,
};
