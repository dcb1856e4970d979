use thiserror::Error;

/// Errors raised by the channel model, dictionaries and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("shape overflow in {op}")]
    ShapeOverflow { op: &'static str },

    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("estimator diverged at iteration {iteration}: residual {residual:.3e} vs minimum {minimum:.3e}")]
    Divergence {
        iteration: usize,
        residual: f64,
        minimum: f64,
    },

    #[error("visible-region sampling produced an all-blocked path after {attempts} attempts")]
    BlockedPath { attempts: usize },
}

impl Error {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(name: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
