use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: Shape, got: Shape },

    #[error("numeric failure{}: {context}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericFailure { step: Option<usize>, context: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("prompt syntax error: {0}")]
    PromptSyntax(String),

    #[error("not enough `{label}` cases: requested {requested}, available {available}")]
    InsufficientCases {
        label: String,
        requested: usize,
        available: usize,
    },

    #[error("case ids shared between training and evaluation splits: {0:?}")]
    SplitLeak(Vec<String>),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Config(String),
}

/// Failures while decoding one of the binary artifact formats.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed field: {0}")]
    Malformed(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(step: Option<usize>, context: impl Into<String>) -> Self {
        Error::NumericFailure {
            step,
            context: context.into(),
        }
    }

    /// Attaches a step index to a numeric failure that does not carry one yet.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::NumericFailure { step: None, context } => Error::NumericFailure {
                step: Some(step),
                context,
            },
            other => other,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Config(e.to_string())
    }
}
