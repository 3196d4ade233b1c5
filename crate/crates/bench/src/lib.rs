//! Build-and-measure harness: compiles baselines and strategy variants of an
//! ensemble with the system toolchain, checks them against direct inference
//! and reports normalized execution times.

pub mod bench;
pub mod build;
pub mod dataset;
pub mod host;
pub mod report;
pub mod runner;
pub mod toolchain;

use std::path::Path;

use thiserror::Error;

pub use bench::{run_bench, run_bench_on, sweep_ks, BenchConfig};
pub use build::{EmitError, Variant};
pub use report::{BenchReport, Row};
pub use toolchain::{Toolchain, ToolchainError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Toolchain(#[from] ToolchainError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Model(#[from] regforest::ModelError),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl BenchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
