//! Library side of the `drunet-lab` binary: run configuration, report
//! format, and the subcommands.

pub mod commands;
pub mod config;
pub mod report;
