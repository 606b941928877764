use thiserror::Error;

/// Errors raised by the copula, margin, and vine routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid copula spec: {0}")]
    InvalidSpec(String),

    #[error("kendall's tau {tau} outside attainable range [{lo}, {hi}] for {family}")]
    TauOutOfRange {
        family: String,
        tau: f64,
        lo: f64,
        hi: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate margin: {0}")]
    DegenerateMargin(String),

    #[error("degenerate conditioner: jump {0:e} below 1e-12")]
    DegenerateConditioner(f64),

    #[error("optimizer did not converge after {iterations} iterations (best theta {best_theta}, loglik {best_value})")]
    FitFailed {
        iterations: usize,
        best_theta: f64,
        best_value: f64,
    },

    #[error("invalid request: {0}")]
    Request(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("model parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
