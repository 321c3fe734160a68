use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A configuration invariant does not hold; the message names it.
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The initial point lies in neither the flow set nor the jump set.
    #[error("invalid start: initial state is in neither the flow set nor the jump set")]
    InvalidStart,

    /// A non-finite value appeared while integrating.
    #[error("integration diverged at t = {t}")]
    Diverged { t: f64 },

    /// An oracle (gradient, optimal value, minimizer, ...) needed for a check is missing.
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
