//! File-based experiment pipeline: synthetic data, cross-validated training of
//! the generator and the refinement module, evaluation and SUVR agreement.

pub mod config;
pub mod error;
pub mod layout;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{Profile, RunConfig};
pub use error::{PipelineError, Result};
pub use pipeline::{Phase, Pipeline};
