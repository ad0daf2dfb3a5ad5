//! Batch front end: configuration files, figure presets, execution and
//! result persistence.

pub mod config;
pub mod presets;
pub mod run;
pub mod svg;

pub use config::{ConfigError, Experiment, ExperimentConfig, Grid, Scale};
pub use presets::{preset, presets, PRESET_NAMES};
pub use run::{run, RunError, RunOutcome, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION};
