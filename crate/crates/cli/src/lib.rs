//! Configuration, orchestration and persistence for the `roughavg`
//! experiment CLI.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod manifest;
pub mod plots;
pub mod run;

pub use config::{ExperimentConfig, ValidationError};
pub use manifest::{RunDir, RunManifest, RunStatus};
pub use plots::{emit_plots_data, ExperimentReport};
pub use run::{run, Command, RunError};
