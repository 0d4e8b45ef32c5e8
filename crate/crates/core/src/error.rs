use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("block kind error: {0}")]
    Kind(String),
    #[error("division by zero: {0}")]
    Division(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(csv::Error),
}

/// I/O failures inside the CSV writer surface as [`Error::Io`].
impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if !e.is_io_error() {
            return Error::Csv(e);
        }
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("is_io_error implies ErrorKind::Io"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
