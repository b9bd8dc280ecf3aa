use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("singular moment matrix at node {node}: {reason}")]
    Singular { node: usize, reason: String },

    #[error("divergence at step {step}, node {node}")]
    Divergence { step: u64, node: usize },

    #[error("eigensolver did not converge after {restarts} restarts (best residuals {best:?})")]
    NoConvergence { restarts: usize, best: Vec<f64> },

    #[error("branch tracking failed at k = {k}: {reason}")]
    Branch { k: f64, reason: String },

    #[error("steady state not reached after {steps} steps (residual {residual:e})")]
    Timeout { steps: u64, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::Divergence { .. }
                | Error::NoConvergence { .. }
                | Error::Branch { .. }
                | Error::Timeout { .. }
        )
    }
}
