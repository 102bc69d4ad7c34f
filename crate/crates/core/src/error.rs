use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes incompatible for the named operation.
    #[error("{op}: dimension mismatch, left {lhs:?} vs right {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// A caller-facing contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// One of the two treatment groups is empty where the operation needs
    /// both. Callers typically skip the corresponding loss term.
    #[error("treatment group absent")]
    GroupAbsent,

    /// Malformed input file.
    #[error("format error at row {row}: {msg}")]
    Format { row: usize, msg: String },

    /// Pearson correlation undefined (zero-variance residuals).
    #[error("correlation undefined: zero-variance residuals")]
    UndefinedCorrelation,

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
