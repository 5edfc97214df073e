//! Library surface of the command-line runner: configuration parsing and
//! the run pipeline, shared with the acceptance test suite.

pub mod config;
pub mod pipeline;
