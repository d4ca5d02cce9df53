//! Experiment driver for stacking sequence retrieval.

pub mod app;
pub mod config;
pub mod error;
pub mod runner;
pub mod summary;

pub use error::{CliError, CliResult};
