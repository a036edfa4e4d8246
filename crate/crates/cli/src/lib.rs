//! Experiment harness for the `lrot` solvers: synthetic generators, sweeps over solver
//! matrices, CSV/JSON outputs, and SVG/PGM plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod config;
pub mod datagen;
pub mod error;
pub mod plots;
pub mod sweep;

pub use config::{CostKind, ExperimentConfig, Family, Method, SolverEntry};
pub use error::{CliError, Result};
pub use sweep::{run_sweep, ResultRow};
