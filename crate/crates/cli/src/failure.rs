use std::fmt;

use seqrec_core::Error;

/// Exit code 2: bad usage, config or input data.
pub const EXIT_USAGE: u8 = 2;
/// Exit code 1: the command started and failed.
pub const EXIT_RUNTIME: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Core errors that stem from what the user supplied map to exit 2.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::UnknownKind(_)
            | Error::Parse { .. }
            | Error::EmptyDataset
            | Error::Format(_)
            | Error::Json(_)
            | Error::Precondition(_) => Failure::usage(e),
            _ => Failure::runtime(e),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Adds a message to a failure while keeping its exit code.
pub trait Context<T> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CmdResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CmdResult<T> {
        self.map_err(|e| {
            let f = e.into();
            Failure {
                code: f.code,
                error: f.error.context(msg),
            }
        })
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e)
    }
}
