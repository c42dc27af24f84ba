//! Experiment harness: configuration, data loops, metrics, ingestion, sweeps and export.

pub mod config;
pub mod export;
pub mod ingest;
pub mod metrics;
pub mod run;
pub mod sweep;

pub use config::{ExperimentConfig, ExperimentKind};
pub use export::{export_results, write_stream_csv};
pub use metrics::{compute_metrics, LossKind, MetricTrace, Summary};
pub use run::{run_bandit, run_experiment, run_prequential, RunOptions, TrialResult};
pub use sweep::{export_sweep, run_sweep, SweepOutcome};
