use thiserror::Error;

/// Errors produced by the laboratory.
///
/// Variants are grouped so the CLI can map them to exit codes: configuration
/// problems exit with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("resolution error: inclusion `{inclusion}` cannot be realized: {detail}")]
    Resolution { inclusion: String, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular weight: {0}")]
    Singularity(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },
    #[error("conditioning error: {0}")]
    Conditioning(String),
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("internal assertion failed: {0}")]
    Internal(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors that stem from user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parameter(_) | Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
