//! Library surface of the command-line front end, exposed for integration
//! tests: strict config parsing and the subcommand implementations.

pub mod commands;
pub mod config;

pub use commands::{classify, run_command, CliError, Command};
pub use config::{parse_config, RunConfig};
