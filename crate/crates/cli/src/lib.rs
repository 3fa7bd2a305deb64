//! Configuration parsing and subcommand implementations behind the
//! `limitlab` binary.

pub mod commands;
pub mod config;

pub use config::{ConfigError, ExperimentConfig};
