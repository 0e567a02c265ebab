//! Configuration, experiment orchestration and reporting behind the
//! `attengluco` binary.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::RunConfig;
pub use experiment::{run_experiment, Experiment};
pub use report::Table;
