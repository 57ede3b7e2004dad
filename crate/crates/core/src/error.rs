use thiserror::Error;

/// Errors raised across the planner library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("linearization point is degenerate: {0}")]
    DegenerateOperatingPoint(String),

    #[error("observation buffer holds {filled} of {depth} rows")]
    UnderfilledBuffer { filled: usize, depth: usize },

    #[error("sampling region is degenerate: {0}")]
    DegenerateRegion(String),

    #[error("box QP did not terminate within {0} active-set steps")]
    QpIterationCap(usize),

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("safety constraints could not be satisfied (min d_i = {min_distance:.4})")]
    SafetyInfeasible { min_distance: f64 },

    #[error("ADMM subproblem failed at iteration {iteration}: {source}")]
    Admm {
        iteration: usize,
        #[source]
        source: Box<Error>,
        trace: Vec<crate::admm::TraceRecord>,
    },

    #[error("malformed weights file: {0}")]
    WeightsFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty simulation log")]
    EmptyLog,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
