//! File formats, pipeline stages and the command-line driver built on
//! [`rvinr_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{PipelineError, Result};
pub use manifest::Manifest;
