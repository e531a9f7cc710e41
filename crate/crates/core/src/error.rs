use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid input to {context}: {reason}")]
    InvalidInput {
        context: &'static str,
        reason: String,
    },

    #[error("{context}: spectral radius {radius} is not below 1")]
    Divergence { context: &'static str, radius: f64 },

    #[error("{context} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        context: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "preset integrity check failed: {quantity} recomputed as {recomputed}, expected {expected}"
    )]
    PresetIntegrity {
        quantity: String,
        recomputed: f64,
        expected: f64,
    },

    #[error("only diagonal covariance matrices are supported")]
    UnsupportedCovariance,

    #[error("watermark channel exhausted: counter overflow")]
    ChannelExhausted,

    #[error("attack channel called out of order: step {step} after step {previous}")]
    Sequencing { step: u64, previous: u64 },

    #[error("compensation requested at step {step} before any healthy output was stored")]
    ColdStart { step: u64 },

    #[error("not enough samples: {available} available, window needs {required}")]
    WarmUp { available: usize, required: usize },

    #[error("insufficient samples: {reason}")]
    InsufficientSamples { reason: String },

    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
