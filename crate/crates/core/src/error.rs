use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// The (p, a) root finder failed to converge for node `n`, slot `k`.
    #[error("power/bandwidth root finder did not converge at node {n}, slot {k} (bracket [{lo}, {hi}])")]
    RootFinder { n: usize, k: usize, lo: f64, hi: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{context}: {source}")]
    Window {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("bracket does not contain a minimizer: {0}")]
    Bracket(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
