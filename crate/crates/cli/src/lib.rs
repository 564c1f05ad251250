//! Batch driver: reads a TOML config, runs one command and writes CSV/JSON
//! artifacts into an output directory.

pub mod build;
pub mod commands;
pub mod config;
pub mod error;
mod experiments;

pub use commands::run_command;
pub use config::Config;
pub use error::CliError;

/// Version of every JSON document written by the driver.
pub const SCHEMA_VERSION: u32 = 1;
