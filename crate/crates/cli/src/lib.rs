//! Batch front-end: scenario files in, CSV tables and a manifest out.

pub mod commands;
pub mod error;
pub mod output;
pub mod templates;

pub use error::{CliError, CliResult};
