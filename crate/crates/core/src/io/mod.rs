//! Configuration files, run dispatch and on-disk artifacts (CSV, JSON report, manifest).

pub mod config;
pub mod output;
pub mod run;

pub use config::{Command, RunConfig};
pub use run::{run, RunOutcome};
