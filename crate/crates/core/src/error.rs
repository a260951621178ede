use thiserror::Error;

pub type Result<T> = std::result::Result<T, SketchError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("capacity exceeded: {what} ({requested} > cap {cap})")]
    Capacity {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e}, tolerance {tolerance:e})")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("eigensolver did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("iteration limit of {limit} reached; row counts so far: {history:?}")]
    IterationLimit { limit: usize, history: Vec<usize> },
}

impl SketchError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        SketchError::Contract(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SketchError::Parameter(msg.into())
    }

    /// Whether this error comes from floating-point trouble rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SketchError::NotPsd { .. }
                | SketchError::NonConvergence { .. }
                | SketchError::Overflow(_)
                | SketchError::DegenerateBasis(_)
                | SketchError::IterationLimit { .. }
        )
    }
}
