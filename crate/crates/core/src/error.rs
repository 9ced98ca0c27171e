use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised while decoding a TRUW weight file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WeightFileError {
    #[error("bad magic: expected TRUW")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),
    #[error("weight file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("unknown dtype code {code} for tensor `{name}`")]
    BadDtype { name: String, code: u8 },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor `{0}` has a non-positive or non-finite quantization scale")]
    BadScale(String),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch { context: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative input to {0}")]
    NegativeInput(&'static str),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}`: {detail}")]
    BadTensor { name: String, detail: String },

    #[error(transparent)]
    WeightFile(#[from] WeightFileError),

    #[error("wav: {0}")]
    Wav(String),

    #[error("empty calibration set")]
    EmptyCalibration,

    #[error("store is already quantized")]
    AlreadyQuantized,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
