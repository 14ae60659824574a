use std::path::PathBuf;

use ironygen_nn::NnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sentiment lexicon is empty")]
    EmptyLexicon,
    #[error("classifier has not been trained")]
    UntrainedClassifier,
    #[error("need examples of both classes, got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("non-finite loss for sample `{sample}`")]
    NonFiniteLoss { sample: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Nn(NnError::ShapeMismatch { .. }) => "shape_mismatch",
            Error::Nn(NnError::NonFiniteGradient(_)) => "non_finite_gradient",
            Error::Nn(NnError::Checkpoint(_)) => "bad_checkpoint",
            Error::Nn(_) => "nn",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "config",
            Error::EmptyLexicon => "empty_lexicon",
            Error::UntrainedClassifier => "untrained_classifier",
            Error::SingleClass { .. } => "single_class",
            Error::TooLong { .. } => "too_long",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
        }
    }
}
