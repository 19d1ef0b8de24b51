use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("command `{0}` is not in the allowlist")]
    DisallowedCommand(String),

    #[error("command `{program}` exceeded its {timeout_secs:.3}s timeout")]
    Timeout { program: String, timeout_secs: f64 },

    #[error("failed to spawn `{program}`: {source}")]
    SpawnFailure {
        program: String,
        #[source]
        source: std::io::Error,
    },

    #[error("path {0} escapes the task workspace")]
    WorkspaceEscape(PathBuf),

    #[error("analyzer unavailable: {0}")]
    AnalyzerUnavailable(String),

    #[error("analyzer could not parse source: {0}")]
    ParseFailure(String),

    #[error("analyzer returned a malformed response: {0}")]
    AnalyzerProtocol(String),

    #[error("value {0} is outside [-1, 1]")]
    OutOfRange(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("negative update weight {0}")]
    NegativeWeight(f64),

    #[error("memory store is empty")]
    EmptyStore,

    #[error("skill library is empty")]
    EmptyLibrary,

    #[error("storage failure: {0}")]
    StorageFailure(String),

    #[error("generator unreachable: {0}")]
    GeneratorUnreachable(String),

    #[error("invalid counts: {successes} successes out of {trials} trials")]
    InvalidCounts { successes: u64, trials: u64 },

    #[error("unsupported confidence level {0}")]
    UnsupportedConfidence(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
