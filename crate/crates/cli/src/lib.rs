//! Command-line front end: TOML experiment configs, the subcommand runners
//! and their CSV/SVG artifacts.

pub mod config;
pub mod error;
pub mod run;
pub mod svg;

pub use config::{ExperimentConfig, SweepCell, SweepSpec};
pub use error::{CliError, Result};
