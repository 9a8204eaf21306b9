//! File formats, the `csc-ipca` command line, thread-pool drivers and the golden fixtures for
//! the `csc-ipca-core` estimators.

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod output;
pub mod parallel;
pub mod study;

pub use error::{CliError, CliResult};
