//! Command-line driver: run configs, the seven subcommands, ablation sweeps
//! and the invariant suite.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;
pub mod verify;

pub use commands::{run, Cli, Command};
pub use error::{CliError, Result};
