use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate treatment: {0}")]
    DegenerateTreatment(String),

    #[error("no confidence interval available: {0}")]
    NoInterval(String),

    #[error("model format version mismatch: file has {found}, expected major {expected}")]
    VersionMismatch { found: String, expected: u16 },

    #[error("model file checksum error: {0}")]
    Checksum(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = configuration problem, 3 = bad input data, 4 = model problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Data(_)
            | Error::InsufficientData(_)
            | Error::DegenerateTreatment(_)
            | Error::Io { .. } => 3,
            Error::SchemaViolation(_)
            | Error::NoInterval(_)
            | Error::VersionMismatch { .. }
            | Error::Checksum(_) => 4,
        }
    }
}
