//! Command-line front end for the bridge lab: training runs, sampling,
//! translation, evaluation, the transport oracle, and SVG plots.
//!
//! The binary (`sbridge`) parses arguments and maps errors to exit codes;
//! everything it does is reachable through [`commands`] so tests can call
//! the same paths in-process. File formats live in [`config`] (TOML runs),
//! [`checkpoint`] (JSON state), and [`csvio`] (numeric CSV).

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod evalutil;
pub mod observer;
pub mod plot;
pub mod rundir;

pub use error::CliError;
