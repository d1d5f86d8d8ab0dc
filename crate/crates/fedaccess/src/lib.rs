//! Experiment runner for the `fedaccess-core` simulator: IDX dataset
//! loading, model checkpoints, TOML run configuration, CSV outputs and the
//! `fedaccess` command-line tool.

pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod idx;
pub mod output;
pub mod runner;

pub use error::{Error, Result};
