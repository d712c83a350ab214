use std::path::PathBuf;

use thiserror::Error;

/// A single problem found while validating a run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    /// Dotted key path, e.g. `params.delta`.
    pub key: String,
    /// 1-based line in the source document, when known.
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular potential evaluated at r = {0} (|r| >= 1)")]
    Singularity(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NewtonDivergence { iters: usize, residual: f64 },

    #[error("time step underflow at step {step} (t = {time}, dt reached {dt:.3e}); state written to {snapshot:?}")]
    DtUnderflow {
        step: u64,
        time: f64,
        dt: f64,
        snapshot: Option<PathBuf>,
    },

    #[error("stationary solver did not converge (best residual {best_residual:.3e})")]
    NonConvergence { best_residual: f64 },

    #[error("tridiagonal solve failed: {0}")]
    Solver(String),

    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("snapshot parameter hash {found} does not match configuration hash {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
