//! Pipeline plumbing behind the `spikesearch` binary: configuration, seeds,
//! the run manifest, stage bodies and reports.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod seeds;
pub mod stages;

pub use config::Config;
pub use error::CliError;
pub use pipeline::Pipeline;
