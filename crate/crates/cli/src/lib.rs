//! Configuration, dataset loading and experiment orchestration for the
//! `revelight` command.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;

pub use error::{CliError, CliResult};
