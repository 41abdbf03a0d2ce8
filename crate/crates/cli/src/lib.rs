//! Experiment plumbing behind the `mgmc` binary: config files, Monte-Carlo
//! sweeps with CSV output, oracle gap reports and report checks.

pub mod config;
pub mod report;
pub mod sweep;
