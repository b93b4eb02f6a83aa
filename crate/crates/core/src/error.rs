use thiserror::Error;

/// Errors raised by the solvers and certification routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition of a certification check does not hold, so a pass
    /// would be vacuous.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An iterative method did not reach its tolerance.
    #[error("no convergence after {iterations} iterations (last error {last_error:.3e})")]
    Convergence { iterations: usize, last_error: f64, trace: Vec<f64> },

    /// The discretisation is too coarse for the requested operation.
    #[error("ill-conditioned discretisation: {0}")]
    Conditioning(String),

    /// Too many simulated paths left the grid on which the drift is known.
    #[error("{excluded} of {total} paths left the drift grid")]
    OutOfGrid { excluded: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
