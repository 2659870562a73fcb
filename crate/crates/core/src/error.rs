use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("truncation error: {leaked:.3e} probability mass left the grid (limit {limit:.1e})")]
    Truncation { leaked: f64, limit: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("contraction violated: rho = {0:.6} >= 1")]
    ContractionViolated(f64),

    #[error("density value {value:.3e} at {x} is below the evaluation floor")]
    EvaluationRange { x: f64, value: f64 },

    #[error("rearrangement failure: {0}")]
    Rearrangement(String),

    #[error("support violation: |g| = {leak:.3e} outside [{a}, {b}]")]
    SupportViolation { a: f64, b: f64, leak: f64 },

    #[error("horizon exhausted on process {0} with no continuation")]
    HorizonExhausted(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("ledger corruption: {0}")]
    LedgerCorruption(String),

    #[error("degenerate conditional: column {0} has zero marginal mass")]
    DegenerateConditional(usize),

    #[error("spec violation: sampled |xi| = {value} exceeds bound {bound}")]
    SpecViolation { value: f64, bound: f64 },

    #[error("io error: {0}")]
    Io(String),

    #[error("{module} (replication {replication}): {source}")]
    InReplication {
        module: &'static str,
        replication: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_replication(self, module: &'static str, replication: usize) -> Self {
        Error::InReplication {
            module,
            replication,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
