use std::path::PathBuf;

use thiserror::Error;

use crate::scoring::EmbeddingKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("pair `{pair_id}`: {message}")]
    Pair { pair_id: String, message: String },

    #[error("embedding not found for {0}")]
    NotFound(EmbeddingKey),

    #[error("embedding service request for {key} failed after {attempts} attempt(s): {message}")]
    Service {
        key: EmbeddingKey,
        attempts: usize,
        message: String,
    },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("no knee point: {0}")]
    NoKnee(String),

    #[error("stability bound is zero (flip differences are degenerate); supply an explicit bound override")]
    ZeroBound,

    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}")]
    Image {
        context: String,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
