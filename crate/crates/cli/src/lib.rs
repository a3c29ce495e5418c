//! File formats, the synthetic study harness and the `treediff` command line.

pub mod commands;
pub mod csv_io;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rotation;

pub use crate::error::{CliError, Result};
