use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("requested {requested} items but the kernel has numerical rank {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("instance too large for exhaustive search: C({n}, {k}) exceeds {limit}")]
    TooLarge { n: usize, k: usize, limit: u64 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("no fully visible limb to rotate")]
    EmptyControlSet,

    #[error("cannot inpaint: {0}")]
    CannotInpaint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool: 1 for configuration
    /// and parse failures, 2 for numeric and integrity failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_)
            | Error::Rank { .. }
            | Error::TooLarge { .. }
            | Error::Integrity(_)
            | Error::Degenerate(_)
            | Error::EmptyControlSet
            | Error::CannotInpaint(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(err: image::ImageError) -> Self {
        Error::Image(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(io::Error::other(err.to_string()))
    }
}
