use std::io;

use thiserror::Error;

use crate::ontology::SeverityLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("duplicate characteristic id `{0}`")]
    DuplicateCharacteristic(String),

    #[error("unknown characteristic `{0}`")]
    UnknownCharacteristic(String),

    #[error("label {label} is not admissible for characteristic `{characteristic}`")]
    InadmissibleLabel {
        characteristic: String,
        label: SeverityLabel,
    },

    #[error(
        "document `{doc_id}`: span [{start}, {end}) is out of bounds for text of length {len}"
    )]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("document `{doc_id}`: overlapping spans for characteristic `{characteristic}`")]
    OverlappingSpans {
        doc_id: String,
        characteristic: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("model file: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
