//! File formats, experiment orchestration and the `start` command line on
//! top of `start-core`.

pub mod checks;
pub mod cli;
pub mod cmd;
pub mod config;
pub mod error;
pub mod manifest;
pub mod model_io;
pub mod output;

pub use error::{CliError, Result};
