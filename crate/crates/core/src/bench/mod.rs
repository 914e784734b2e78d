//! Benchmark harness: datasets, corruptions, metrics and the experiment runner.

pub mod config;
pub mod corrupt;
pub mod data;
pub mod experiment;
pub mod metrics;

pub use config::{DataSpec, ExperimentConfig, ModelKind};
pub use corrupt::{CorruptionKind, CorruptionSpec, Corrupted};
pub use data::{DataSource, Dataset};
pub use experiment::{run_experiment, run_seed, write_csv, ItemResult, RunResult};
pub use metrics::{mse, recall_accuracy};
