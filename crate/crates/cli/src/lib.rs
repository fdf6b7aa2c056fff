//! Library side of the `mededge` executable: argument parsing, subcommands, and
//! the end-to-end pipeline.

pub mod commands;
pub mod error;
pub mod pipeline;

pub use commands::{run, Cli, Command, Format, Output};
pub use error::CliError;
