use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// The variants group into four families that the CLI maps onto exit codes:
/// configuration/input problems, numeric divergence, residual-cache integrity,
/// and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("residual cache has no entry for sample {0}")]
    CacheMiss(usize),

    #[error("residual cache integrity: {0}")]
    CacheIntegrity(String),

    #[error("stale residual cache: expected fingerprint {expected}, file has {found}")]
    StaleCache { expected: String, found: String },

    #[error("virtual residual for sample {index} in fold {fold} is not finite ({value})")]
    Pipeline { index: usize, fold: usize, value: f64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 configuration, 3 divergence,
    /// 4 cache integrity, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::Input(_) | Error::Parse { .. } => 2,
            Error::Divergence { .. } | Error::Numeric(_) | Error::Pipeline { .. } => 3,
            Error::CacheMiss(_) | Error::CacheIntegrity(_) | Error::StaleCache { .. } => 4,
            Error::Io { .. } => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
