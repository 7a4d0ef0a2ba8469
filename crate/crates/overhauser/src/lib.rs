//! Configuration, file formats, parallel drivers and the command-line
//! pipelines around [`overhauser_core`].

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod parallel;

pub use overhauser_core as core;

pub use commands::{execute, Command, FitKind, SweepResult};
pub use config::{Preset, RunConfig};
pub use error::{CliError, Result};
pub use formats::{Format, Table};
pub use manifest::{replay, Manifest};

/// Recorded in manifests and sweep provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
