use thiserror::Error;

/// Errors raised by the allocation solvers, the sensor cost models and the
/// simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A region, graph or solver configuration that cannot be used.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain where a quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix sizes that do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// An iterative numerical routine failed to converge or overflowed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A cost curve that breaks a modelling assumption the solver relies on.
    #[error("assumption violated: {0}")]
    Assumption(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
