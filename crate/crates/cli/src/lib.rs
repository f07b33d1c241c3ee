//! Experiment driver: config parsing, recipe dispatch and CSV output.

pub mod bundled;
pub mod config;
pub mod output;
pub mod run;

pub use config::{ConfigError, Experiment, Recipe};
pub use run::{run, Report, RunError};
