use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The maze layout could not be parsed.
    #[error("maze layout error at line {line}, column {column}: {message}")]
    MazeLayout {
        line: usize,
        column: usize,
        message: String,
    },

    /// The posterior integrand vanished on every grid point, even in log space.
    #[error("quadrature underflow: posterior is zero on the whole grid [{lo}, {hi}]")]
    QuadratureUnderflow { lo: f64, hi: f64 },

    /// Two value tables were compared over different key sets.
    #[error("key mismatch: {left} entries vs {right} entries")]
    KeyMismatch { left: usize, right: usize },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
