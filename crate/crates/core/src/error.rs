use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants fall into two families: validation problems (bad shapes, bad
/// configuration, malformed files) and numerical failures (non-convergence,
/// non-normalizable spectra, divergence). The CLI maps them to exit codes 2
/// and 3 respectively.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("indefinite spectrum not normalizable (trace {trace:.6e} after policy)")]
    NotNormalizable { trace: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::NotNormalizable { .. }
                | Error::Numerical(_)
                | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
