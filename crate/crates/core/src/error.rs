use thiserror::Error;

pub type Result<T, E = RfxError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RfxError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),
}

impl RfxError {
    pub fn argument(msg: impl Into<String>) -> Self {
        RfxError::Argument(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        RfxError::Model(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        RfxError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `rfx` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            RfxError::Argument(_) | RfxError::State(_) | RfxError::Format(_) => 2,
            RfxError::Io { .. } => 3,
            RfxError::Model(_) | RfxError::Generation(_) | RfxError::Construction(_) => 4,
        }
    }
}
