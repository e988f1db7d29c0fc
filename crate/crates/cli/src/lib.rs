//! Command-line driver for the `shapecov` pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixture;
pub mod inputs;
pub mod output;
pub mod pipeline;
pub mod stages;
pub mod svg;

pub use commands::{run, Cli};
pub use error::CliError;
