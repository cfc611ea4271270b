use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point lies behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("no local field covers frame {0}")]
    UncoveredRay(usize),
    #[error("undefined loss: {0} has no valid entries")]
    UndefinedLoss(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence too short: {got} frames, at least {need} required")]
    SequenceTooShort { got: usize, need: usize },
    #[error("{}: {msg}", path.display())]
    Load { path: PathBuf, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("synthetic scene generation failed: {0}")]
    Generation(String),
    #[error("trajectory alignment failed: {0}")]
    Alignment(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Coarse classification used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Load { .. }
            | Error::Parse { .. }
            | Error::SequenceTooShort { .. }
            | Error::Generation(_)
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Image(_) => ErrorClass::Data,
            _ => ErrorClass::Runtime,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Runtime => 4,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
