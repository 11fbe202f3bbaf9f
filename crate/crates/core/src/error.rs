use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shapes, block counts or signatures do not line up.
    #[error("structural mismatch: {0}")]
    Structure(String),
    /// A scalar parameter lies outside its admissible interval.
    #[error("parameter out of range: {0}")]
    Parameter(String),
    /// NaN or infinite values reached a computation that requires finite input.
    #[error("non-finite data: {0}")]
    Data(String),
    /// An internal consistency check failed; indicates a bug or pathological scaling.
    #[error("internal assertion failed: {0}")]
    Assertion(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with any iteration context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }
}
