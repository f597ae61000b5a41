//! Standard-library companion to `augrec-core`: the corpus and checkpoint
//! file formats, TOML configuration, run directories, training logs, report
//! rendering and the property batteries behind `augrec verify-losses`.

pub mod checkpoint;
pub mod config;
pub mod corpus_io;
mod error;
pub mod output;
pub mod pipeline;
pub mod verify;

pub use error::{AppError, Result};
