//! Command-line pipeline: simulate a market or read a panel, then run
//! validation, calibration, demand estimation, cost inversion and the
//! pricing check, writing one JSON artifact per stage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod config;
pub mod error;
pub mod report;
pub mod simulate;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult, Stage};
pub use stages::{run_pipeline, run_stage};
