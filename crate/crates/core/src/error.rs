use thiserror::Error;

/// Errors produced by the fleetgame library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    /// A scenario or policy violated an invariant. `pointer` is a JSON-pointer
    /// style path to the offending field.
    #[error("validation error at {pointer}: {message}")]
    Validation { pointer: String, message: String },

    #[error("reducible chain: {0}")]
    ReducibleChain(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// Zones whose M/M/1 queue has no stationary waiting time.
    #[error("unstable queue in zones {zones:?}: passenger arrivals do not exceed taxi inflow")]
    Unstable { zones: Vec<usize> },

    #[error("zero row {row}: find rates sum to zero")]
    ZeroRow { row: usize },

    #[error("illegal action: {0}")]
    IllegalAction(String),

    #[error("state space too large: {states} count states x {horizon} steps exceeds budget {budget}")]
    StateSpaceTooLarge {
        states: u128,
        horizon: usize,
        budget: u128,
    },

    #[error("stage solver did not converge after {iterations} iterations (best regret {regret:e})")]
    NonConvergence { iterations: usize, regret: f64 },

    #[error("policy undefined for {0}")]
    PolicyUndefined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
