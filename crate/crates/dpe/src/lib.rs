//! File formats, reports, parallel drivers and the command-line pipeline
//! around `dpe-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod parallel;
pub mod plan_file;
pub mod report;
pub mod tensor_file;

pub use error::{Result, RunError};
