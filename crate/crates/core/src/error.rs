use thiserror::Error;

/// Errors produced by the tilting primitives, solvers and data layer.
#[derive(Debug, Error)]
pub enum TermError {
    /// Malformed or inconsistent input (dimensions, non-finite values, bad config).
    #[error("invalid input: {0}")]
    Input(String),

    /// Arguments outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (non-finite gradient, non-convergence).
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        residual: Option<f64>,
    },

    /// The objective blew past the divergence guard.
    #[error("solver diverged at iteration {iter}: objective {objective:e}")]
    Diverged {
        iter: usize,
        objective: f64,
        theta: Vec<f64>,
    },

    /// The requested operation is not supported for this input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// CSV schema or parse failure, with the 1-based line number when known.
    #[error("csv error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Csv { line: Option<u64>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TermError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        TermError::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        TermError::Numerical {
            message: msg.into(),
            residual: None,
        }
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TermError::Numerical { .. } | TermError::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, TermError>;
