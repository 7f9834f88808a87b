//! Scenario loading, trace files, result emission and batch orchestration
//! for the `qoesim-core` simulator.
//!
//! The binary in `main.rs` is a thin clap front end over these modules, so
//! everything it does can also be driven from tests or other tools.

pub mod batch;
pub mod compare;
pub mod output;
pub mod scenario;
pub mod trace_io;

pub use qoesim_core as core;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<qoesim_core::config::FieldError>),
    #[error("seed {seed}: {source}")]
    Run {
        seed: u64,
        #[source]
        source: qoesim_core::sim::SimError,
    },
    #[error(transparent)]
    Trace(#[from] qoesim_core::traces::TraceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
