//! File formats, reports, the command-line front end and the curation
//! server for `valulens-core`.

pub mod cli;
pub mod error;
pub mod manifest;
pub mod predictions;
pub mod report;
pub mod serve;

pub use error::{Error, Result};
