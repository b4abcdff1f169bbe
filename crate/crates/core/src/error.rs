use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("patch count {0} is not a perfect square")]
    NotPerfectSquare(usize),
    #[error("patch count {0} is too small (need at least 9 patches)")]
    TooSmall(usize),
    #[error("patch index {index} out of range for a grid of {n} patches")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("unit distance must be positive, got {0}")]
    NonPositiveUnit(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing parameter: {0}")]
    MissingParameter(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
