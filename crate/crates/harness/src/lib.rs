//! Command-line harness around `fbgvi-core`: experiment configs, trace files, step-size
//! sweeps and the acceptance-criteria check suite.

pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod trace;

/// Environment variable that re-roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "FBGVI_OUTPUT_ROOT";
