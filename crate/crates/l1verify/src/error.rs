use thiserror::Error;

/// Failure categories shared by every stage of the verifier. The CLI maps
/// them onto exit codes and verdict reasons.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed or inconsistent user input.
    #[error("input error: {0}")]
    Input(String),
    /// A derivative was requested at a kink of `abs`.
    #[error("non-smooth point: {0}")]
    NonSmooth(String),
    #[error("integrator failure: {0}")]
    Integrator(String),
    /// An implicit solve left its validity neighbourhood.
    #[error("no convergence: {0}")]
    NoConvergence(String),
    /// A quantity that must stay away from zero did not.
    #[error("degenerate: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
