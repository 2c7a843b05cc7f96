//! File formats, dataset IO and the command-line driver for `stgvis-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod ppm;
pub mod predictions;

pub use config::Config;
pub use error::{Error, Result};
