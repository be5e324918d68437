use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("capacity exceeded: {what} needs {required} points, cap is {cap}")]
    Capacity {
        what: String,
        required: u128,
        cap: u128,
    },

    /// An LMI stopped being positive definite and step halving could not recover it.
    #[error("infeasible barrier: {0}")]
    InfeasibleBarrier(String),

    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("enumeration of {required} constraint evaluations exceeds the cap of {cap}; rerun with --force")]
    EnumerationCap { required: u128, cap: u128 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFault(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
