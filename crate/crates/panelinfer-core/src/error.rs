//! Error type shared across the crate.
//!
//! Variants distinguish malformed input (`Parse`), statistically invalid but
//! well-formed input (`Input`), invalid configuration objects (`Spec`), and
//! numerical failures (`Numerical`). The CLI maps all of these to exit code 1;
//! usage problems exit 2 before any `Error` is constructed.

/// Library error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed tabular input; `location` names the offending line or cell.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Well-formed input that violates a statistical precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// Invalid specification or configuration object.
    #[error("invalid specification: {0}")]
    Spec(String),

    /// Numerical failure (asymmetric matrix, indefinite multiplier covariance, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// An error raised inside a named pipeline stage.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Error::Input(message.into())
    }

    pub fn spec(message: impl Into<String>) -> Self {
        Error::Spec(message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }

    /// Wraps the error with a pipeline stage label.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, unwrapping any stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_labels_nest_and_unwrap() {
        let e = Error::input("bad").in_stage("hac").in_stage("test");
        assert_eq!(e.to_string(), "stage test: stage hac: invalid input: bad");
        assert!(matches!(e.root(), Error::Input(_)));
    }
}
