//! Experiment orchestration and synthetic data.

mod experiment;
pub mod metrics;
mod synthetic;

pub use experiment::{
    run_experiment, run_experiment_with, CompleterFactory, DatasetSummary, ExperimentError, ExperimentRecord, ExperimentReport, ExperimentSpec,
    Provenance,
};
pub use metrics::{mae, rmse};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
