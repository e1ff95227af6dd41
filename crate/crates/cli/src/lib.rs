//! Batch pipeline behind the `occsel` binary.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{Command, RunConfig};
pub use pipeline::run_pipeline;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Numerical(_) => 3,
            PipelineError::Io { .. } => 1,
        }
    }
}

impl From<occsel_core::Error> for PipelineError {
    fn from(e: occsel_core::Error) -> Self {
        if e.is_config_error() {
            PipelineError::Config(e.to_string())
        } else {
            PipelineError::Numerical(e.to_string())
        }
    }
}
