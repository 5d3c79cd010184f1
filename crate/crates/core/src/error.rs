use thiserror::Error;

/// Errors raised by the simulator, the sizing solver and the metrics pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid model: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("flow solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("time step {dt} s exceeds the stability bound; use dt <= {suggested} s")]
    StepTooLarge { dt: f64, suggested: f64 },

    #[error("unknown thermal mass `{0}`")]
    UnknownMass(String),

    #[error("missing trajectory channels: {}", .0.join(", "))]
    MissingChannels(Vec<String>),

    #[error("insufficient signal variation: {0}")]
    InsufficientVariation(String),

    #[error("empty interval: {0}")]
    EmptyInterval(String),

    #[error("non-overlapping t* spans: [{a0}, {a1}] vs [{b0}, {b1}]")]
    SpanMismatch { a0: f64, a1: f64, b0: f64, b1: f64 },

    #[error("nondimensional base mismatch: {0}")]
    BaseMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
