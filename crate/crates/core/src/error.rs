use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("undefined reference: {0}")]
    UndefinedReference(String),
    #[error("pvol parse error in `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(field: &str, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
