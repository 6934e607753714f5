//! File formats, run configuration and pipeline stages around
//! [`longsig_core`]. The `longsig` binary exposes each stage as a
//! subcommand.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod runner;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use pipeline::{Outcome, Pipeline, Stage};
