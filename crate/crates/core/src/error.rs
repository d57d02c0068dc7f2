use thiserror::Error;

use crate::simulator::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("{0}")]
    Config(String),

    /// A state variable or input that must be finite was not.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("negative elapsed time {0} in androgen closed form")]
    NegativeElapsed(f64),

    /// The trajectory left the admissible region (non-finite or negative populations).
    /// The partial trajectory up to the failure is attached when available.
    #[error("simulation diverged at t = {t}: {reason}")]
    Divergence {
        t: f64,
        reason: String,
        partial: Option<Box<Trajectory>>,
    },

    /// Guard crossed with (numerically) zero transversal speed; the event-time
    /// derivative is undefined there.
    #[error("tangential crossing at tau = {tau}, theta index {index}: drift sum {drift_sum:e}")]
    TangentialCrossing {
        tau: f64,
        index: usize,
        drift_sum: f64,
    },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    /// Caller bug: a precondition of an internal routine was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::InvalidState(_) | Error::NegativeElapsed(_) | Error::Internal(_) => "internal",
            Error::Divergence { .. } => "divergence",
            Error::TangentialCrossing { .. } => "tangential",
            Error::Unsupported(_) => "unsupported",
            Error::Io(_) => "io",
        }
    }

    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::TangentialCrossing { .. } | Error::InvalidState(_)
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
