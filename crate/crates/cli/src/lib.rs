//! Study runner: reads a JSON experiment config, runs one study and writes
//! `report.json`, CSV tables and SVG plots.

pub mod config;
pub mod error;
pub mod plot;
pub mod report;
pub mod studies;

pub use config::{ExperimentConfig, Study};
pub use error::{CliError, Result};
pub use report::{Check, Report, StudyOutput};
pub use studies::run_study;
