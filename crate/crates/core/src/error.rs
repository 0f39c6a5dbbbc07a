use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported mechanism: {0}")]
    Unsupported(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Integer gene or species counts would overflow.
    #[error("count overflow: {0}")]
    Overflow(String),

    #[error("solver failure: {0}")]
    Solver(String),

    /// The explicit PDE scheme left the admissible range.
    #[error("stability violation at t={time:.6}, lambda={lambda:.6} (u={value:e}); reduce the time step below {advice:e}")]
    Stability {
        time: f64,
        lambda: f64,
        value: f64,
        advice: f64,
    },

    /// The CPP window was too short to contain the left-most surviving branch.
    #[error("cpp window exhausted: length {length} holds no branch above t={horizon}; resample with a larger window")]
    WindowExhausted { length: f64, horizon: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: String, producer: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
