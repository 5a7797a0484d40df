//! Batch orchestration of the effect-estimation pipeline: a JSON config
//! selects the data source, candidate estimators, bootstrap settings, and
//! interpretation outputs; [`pipeline::run_pipeline`] executes every stage
//! and writes all report files under one output directory.

pub mod config;
pub mod pipeline;

use thiserror::Error;

/// Errors surfaced by the command-line layer.
#[derive(Debug, Error)]
pub enum Error {
    /// The config document is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] hetfx_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// An [`Error`] tagged with the pipeline stage that produced it, so failed
/// runs can say where they stopped.
#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn new(stage: &'static str, source: impl Into<Error>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }
}
