use std::io;
use std::path::PathBuf;

use kpem_core::Error as CoreError;

/// Errors of the std layer, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn context(context: impl Into<String>, source: Error) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(source),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Usage(_) => EXIT_USAGE,
            Error::Parse { .. } | Error::Io { .. } | Error::Data(_) => EXIT_DATA,
            Error::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Stage { source, .. } => core_exit_code(source),
        CoreError::InvalidParameter { .. } | CoreError::DimensionGuard { .. } => EXIT_USAGE,
        CoreError::LengthMismatch { .. }
        | CoreError::EmptySeries
        | CoreError::NonFinite { .. }
        | CoreError::TooFewSamples { .. }
        | CoreError::ZeroVariance(_) => EXIT_DATA,
        _ => EXIT_NUMERICAL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_errors_use_the_inner_code() {
        let e = Error::Core(CoreError::Stage {
            stage: "final estimate",
            source: Box::new(CoreError::NoStableStep),
        });
        assert_eq!(e.exit_code(), EXIT_NUMERICAL);
        let e = Error::Core(CoreError::Stage {
            stage: "noise variance",
            source: Box::new(CoreError::TooFewSamples { n: 3, required: 40 }),
        });
        assert_eq!(e.exit_code(), EXIT_DATA);
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let e = Error::parse("x.csv", 7, "bad value");
        assert_eq!(e.to_string(), "x.csv:7: bad value");
        assert_eq!(e.exit_code(), EXIT_DATA);
    }
}
