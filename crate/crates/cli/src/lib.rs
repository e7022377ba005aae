//! Command-line front end: configuration, experiment sweeps and reports.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod svg;

pub use commands::{main_with_args, Cli, CliError};
pub use config::{load_config, parse_config, ConfigError, RunConfig};
pub use experiment::{run_experiment, ExperimentReport, Provenance, Sweep};
