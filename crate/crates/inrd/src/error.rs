use std::path::PathBuf;

use thiserror::Error;

/// Failure modes shared by every module in the crate.
///
/// `Shape` and `Contract` indicate caller mistakes; `Numeric` and
/// `NoConvergence` indicate that a computation went bad at runtime and the
/// partial state is not usable.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions are incompatible with the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument violates a documented precondition.
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// A computation produced non-finite values or otherwise lost meaning.
    #[error("numeric failure in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// An iterative routine ran out of budget before meeting its tolerance.
    /// `last` carries the final iterate so callers can inspect how close it got.
    #[error("{op} did not converge within {iters} iterations (last estimate {last:e})")]
    NoConvergence {
        op: &'static str,
        iters: usize,
        last: f64,
    },

    /// Filesystem access failed.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File contents do not match the expected on-disk format.
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op,
            detail: detail.into(),
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that mean the numbers themselves went bad, as opposed
    /// to a misuse of the API or an io problem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::NoConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
