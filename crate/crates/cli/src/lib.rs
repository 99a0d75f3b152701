//! Configuration and subcommands of the `wastemap` pipeline binary.

use std::fmt;

pub mod commands;
pub mod config;

pub use commands::{cmd_aggregate, cmd_hydro, cmd_lisa, cmd_pano, cmd_risk, cmd_run, cmd_split, Outcome};
pub use config::{LisaMode, PipelineConfig};

/// Exit status for bad input or configuration.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for failures not caused by the input, e.g. unwritable output.
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Library errors reached while reading inputs are input errors.
impl From<wastemap_core::Error> for CliError {
    fn from(e: wastemap_core::Error) -> Self {
        CliError::input(e)
    }
}
