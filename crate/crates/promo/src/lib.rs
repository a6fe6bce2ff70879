//! File formats, run configuration and subcommands for the `promo` harness.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod raster;

pub use config::RunConfig;
pub use error::{Error, Result};
