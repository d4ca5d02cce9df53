use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum SsrError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("state not collapsed: bond {bond} has extent {extent}")]
    NotCollapsed { bond: usize, extent: usize },

    #[error("eigensolver did not converge after {iterations} matvecs (residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        eigenvalue: f64,
        eigenvector: Vec<f64>,
    },

    #[error("optimization aborted in sweep {sweep}: {reason}")]
    Aborted {
        sweep: usize,
        reason: String,
        trace: Box<crate::dmrg::SweepTrace>,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SsrError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(SsrError::Domain(msg.into()))
}
