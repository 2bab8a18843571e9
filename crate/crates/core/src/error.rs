use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A state the plane-stress pipeline does not handle, e.g. an out-of-plane fiber.
    #[error("unsupported state: {0}")]
    Unsupported(String),

    #[error("non-finite ODE state at step {step} (value {value})")]
    NonFinite { step: usize, value: f64 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation failed at {context}: {source}")]
    Evaluation {
        context: String,
        #[source]
        source: Box<Error>,
    },

    /// Training produced a non-finite loss; carries the best finite model seen so far.
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        snapshot: Box<crate::material::NodeMaterialModel>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at(self, context: impl Into<String>) -> Self {
        Error::Evaluation {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error beneath any evaluation context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Evaluation { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
