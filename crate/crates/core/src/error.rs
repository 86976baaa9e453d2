use std::path::PathBuf;

/// Errors surfaced by the watermarking library and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (length mismatch,
    /// out-of-domain strength, incompatible checkpoints, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Torch(#[from] tch::TchError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the CLI: 2 for contract violations, 3 for
    /// I/O problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config(_) => 2,
            Error::Io { .. } | Error::Image { .. } | Error::Checkpoint { .. } => 3,
            Error::Torch(_) | Error::Json(_) => 1,
        }
    }
}

/// Returns a contract violation unless `cond` holds.
pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg()))
    }
}
