use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The CLI maps each family to a distinct exit status, so new variants should
/// be placed in the family that matches how a caller would react to them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed serialized input.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A numerical self-check tripped; the configuration needs a finer mesh,
    /// wider support or different ranges.
    #[error("numerical alarm: {0}")]
    Numerical(String),

    /// The privacy-loss support is too short to resolve the target delta.
    #[error("support exhausted: delta target not reached below t_max; retry with t_max >= {required_t_max}")]
    SupportExhausted { required_t_max: f64 },

    /// No root inside the search bracket.
    #[error("bracket exhausted: {0}")]
    BracketExhausted(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
