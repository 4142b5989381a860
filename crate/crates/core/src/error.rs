use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// A matrix or tensor entry was NaN or infinite where finite input is required.
    NonFiniteEntry {
        context: String,
        row: usize,
        col: usize,
        value: f64,
    },
    /// A scalar (loss, norm, metric) came out NaN or infinite.
    NonFiniteValue { context: String, value: f64 },
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },
    InvalidArgument { context: String },
    /// Effective rank is undefined for an empty or all-zero spectrum.
    EmptySpectrum { context: String },
    KindMismatch {
        name: String,
        expected: String,
        got: String,
    },
    /// An alignment pair whose inner dimensions disagree.
    PairDimMismatch {
        upstream: String,
        downstream: String,
        out_dim: usize,
        in_dim: usize,
    },
    MissingTensor { name: String },
    MissingCheckpoint { step: u64 },
    /// Binary archive parse failure; offset is the byte position of the problem.
    Archive { offset: u64, detail: String },
    Manifest { detail: String },
    /// Training left the finite regime.
    Diverged { step: u64, loss: f64 },
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFiniteEntry {
                context,
                row,
                col,
                value,
            } => write!(
                f,
                "{context}: non-finite entry {value} at ({row}, {col})"
            ),
            Error::NonFiniteValue { context, value } => {
                write!(f, "{context}: non-finite value {value}")
            }
            Error::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected shape {expected}, got {got}"),
            Error::InvalidArgument { context } => write!(f, "invalid argument: {context}"),
            Error::EmptySpectrum { context } => {
                write!(f, "{context}: spectrum is empty or all zero")
            }
            Error::KindMismatch {
                name,
                expected,
                got,
            } => write!(f, "tensor '{name}': expected kind {expected}, got {got}"),
            Error::PairDimMismatch {
                upstream,
                downstream,
                out_dim,
                in_dim,
            } => write!(
                f,
                "pair {upstream} -> {downstream}: upstream output dim {out_dim} \
                 does not match downstream input dim {in_dim}"
            ),
            Error::MissingTensor { name } => write!(f, "tensor '{name}' not found"),
            Error::MissingCheckpoint { step } => write!(f, "no checkpoint at step {step}"),
            Error::Archive { offset, detail } => {
                write!(f, "archive error at byte {offset}: {detail}")
            }
            Error::Manifest { detail } => write!(f, "manifest error: {detail}"),
            Error::Diverged { step, loss } => {
                write!(f, "training diverged at step {step} (loss {loss})")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
