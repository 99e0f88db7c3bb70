use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("class {class} has {available} samples but {required} are required (shortfall {shortfall})")]
    InsufficientSamples {
        class: usize,
        available: usize,
        required: usize,
        shortfall: usize,
    },

    #[error("unsupported modality: {0}")]
    UnsupportedModality(String),

    #[error("field `{field}`: value `{value}` is not in the vocabulary")]
    OutOfVocabulary { field: String, value: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("prior for class {class} is {value}; priors must be strictly positive")]
    ZeroPrior { class: usize, value: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {components}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        components: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
