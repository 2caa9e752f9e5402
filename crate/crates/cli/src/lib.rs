//! Command-line driver: train, quantize, generate test vectors, estimate and
//! run fault campaigns, each leaving a run manifest next to its outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod session;

pub use commands::{execute, Command};
pub use error::{exit, CliError, CliResult};
pub use session::{Context, Outcome};
