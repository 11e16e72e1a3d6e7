//! Command-line companion to `avit-core`: file formats (NetPBM images,
//! AVCK checkpoints, key=value run configs), dataset loading, a synthetic
//! data generator, cross-validation splitting, and the `avit` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod kfold;
pub mod netpbm;
pub mod synthetic;

pub use error::{CliError, Result};
