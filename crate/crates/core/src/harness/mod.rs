//! Experiment configuration, drivers, diagnostics and figures.

pub mod config;
pub mod diagnostics;
pub mod experiment;
pub mod fit;
pub mod plots;

pub use config::{AlphaQScheme, ExperimentConfig, PotentialPreset};
pub use diagnostics::{consistency_diagnostics, ConsistencyRow};
pub use experiment::{prepare, run_delta, run_experiment, write_outputs, DeltaRecord, ExperimentResult, Prepared};
pub use fit::{fit_stability, StabilityFit};
