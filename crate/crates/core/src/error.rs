use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("closure solve did not converge after {iterations} iterations (R={r}, Q={q}, residual={residual:e})")]
    NonConvergence {
        r: f64,
        q: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("no sign change of the mass map within [{lo:e}, {hi:e}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("specific volume lost positivity in cell {cell} (tau={tau:e}) at t={t}")]
    PositivityLoss { cell: usize, tau: f64, t: f64 },

    #[error("consistency check failed: {0}")]
    Assertion(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient sampling: need at least {needed} samples, got {got}")]
    InsufficientSampling { needed: usize, got: usize },

    #[error("run configurations do not match: {0}")]
    ConfigMismatch(String),

    #[error("levels are not nested: {0}")]
    LevelMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// Process exit code: 1 for numerical failures, 2 for I/O and configuration failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Serialize(_)
            | Error::ConfigMismatch(_)
            | Error::LevelMismatch(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
