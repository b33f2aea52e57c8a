use thiserror::Error;

/// Errors raised by the semigroup machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("touching certificate violated at s = {s}, y = {y:?}: margin {margin:e}")]
    Certification { s: f64, y: Vec<f64>, margin: f64 },
    #[error("instance error: {0}")]
    Instance(String),
    #[error("solver spec error: {0}")]
    Spec(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Configuration(msg.into())
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
