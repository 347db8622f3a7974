//! Command line layer over `aggdiff-core`: configuration files, run
//! orchestration, parameter sweeps, the verification suites and output files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod suites;
pub mod sweep;

pub use config::RunConfig;
pub use error::{AppError, Result};
