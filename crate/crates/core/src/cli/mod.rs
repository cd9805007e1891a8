//! Configuration files, run orchestration and output management.

pub mod config;
pub mod run;

pub use config::{parse_config, RunConfig, Setup};
pub use run::{emit_plotdata, exit_code, run, run_study, PlotData, RunManifest, RunOptions, RunOutcome};
