//! Error type shared by every module in the crate.
//!
//! All fallible operations return [`Result`]. Errors carry the name of the
//! operation that rejected its input plus a human-readable detail string, so
//! a failure deep inside a forward pass still points at the offending call.

/// Crate-wide error enum.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor extents are inconsistent with what the operation requires.
    #[error("shape error in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Values are outside the mathematical domain of the operation
    /// (division by zero, log of a non-positive number, non-finite inputs).
    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    /// An API contract was violated (bad configuration, out-of-range class
    /// index, malformed argument combinations).
    #[error("contract violation in `{op}`: {detail}")]
    Contract { op: &'static str, detail: String },

    /// Input data could not be decoded (unknown palette color, malformed
    /// config line, corrupt checkpoint).
    #[error("data error: {0}")]
    Data(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Shorthand for a [`Error::Shape`] value.
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Shorthand for a [`Error::Domain`] value.
    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    /// Shorthand for a [`Error::Contract`] value.
    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    /// Shorthand for a [`Error::Data`] value.
    pub fn data(detail: impl Into<String>) -> Self {
        Error::Data(detail.into())
    }

    /// Shorthand for a [`Error::Io`] value.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
