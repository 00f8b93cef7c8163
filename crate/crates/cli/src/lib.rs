//! Command-line front end: edge extraction, pipeline runs with statistics,
//! the gradient-check suite, ablation runs and weight containers.

pub mod app;
pub mod config;
pub mod error;
pub mod netpbm;
pub mod report;
pub mod weights;

pub use app::{main_with, Cli};
pub use error::{CliError, Result};
