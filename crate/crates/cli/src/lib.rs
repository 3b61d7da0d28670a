//! Command implementations behind the `mixedindep` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use error::{CliError, CliResult};
