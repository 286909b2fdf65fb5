use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Conditioning on an event of (numerically) zero probability.
    #[error("degenerate conditioning: {0}")]
    DegenerateCondition(String),

    #[error("division degeneracy: {0}")]
    DivisionDegeneracy(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite state on path {path} at time index {time_index}")]
    BlowUp { path: usize, time_index: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    /// Explicit step too large for the stability bound.
    #[error("stability bound violated: {detail}; at least {required_steps} steps required")]
    Stability { detail: String, required_steps: usize },

    #[error("accuracy error: {0}")]
    Accuracy(String),

    #[error("wrong form: {0}")]
    WrongForm(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("degenerate sample: {0}")]
    Degeneracy(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors raised by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Stability { .. }
                | Error::Divergence { .. }
                | Error::Accuracy(_)
                | Error::BlowUp { .. }
                | Error::Model(_)
                | Error::Degeneracy(_)
                | Error::DegenerateCondition(_)
                | Error::DivisionDegeneracy(_)
        )
    }
}
