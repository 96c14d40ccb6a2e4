use thiserror::Error;

use crate::units::QuantityError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Quantity(#[from] QuantityError),
    #[error("{source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("unresolved {kind} reference `{name}`{context}")]
    Unresolved {
        kind: &'static str,
        name: String,
        context: String,
    },
    #[error("no {kind} named `{name}`")]
    NotFound { kind: &'static str, name: String },
    #[error("division-domain error: {0}")]
    Domain(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("insufficient data: need at least {needed} {what}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("telemetry and request buckets do not overlap in time")]
    NoOverlap,
    #[error("cannot complete row `{model}`: missing {}", missing.join(", "))]
    CannotComplete { model: String, missing: Vec<String> },
    #[error("cannot extrapolate: {0}")]
    CannotExtrapolate(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent input documents.
    Input,
    /// Inputs were valid but the requested computation is undefined for them.
    Computation,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain(_)
            | Error::EmptyInput(_)
            | Error::InsufficientData { .. }
            | Error::NoOverlap
            | Error::CannotComplete { .. }
            | Error::CannotExtrapolate(_) => ErrorKind::Computation,
            _ => ErrorKind::Input,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.to_string(),
        }
    }
}
