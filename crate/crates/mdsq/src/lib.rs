//! Experiment runner for the `mdsq-core` queue models: spec files,
//! named presets, parallel replications and CSV/JSON tables.

pub mod dump;
pub mod output;
pub mod parallel;
pub mod presets;
pub mod runner;
pub mod spec;

pub use output::{Method, Row, Status};
pub use parallel::ParallelReplicator;
pub use runner::run_experiment;
pub use spec::{ExperimentSpec, Format, Kind, SpecError};
