//! File formats, reports and the command pipeline for `calm-core`.

mod binfmt;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod index_file;
pub mod pipeline;
pub mod reports;

pub use calm_core as core;
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
