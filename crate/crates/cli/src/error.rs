use sqvar::SqvarError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse config {path}: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Core(#[from] SqvarError),
}

impl CliError {
    /// 1 for numerical failures, 2 for usage and I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(
                SqvarError::Numerical(_)
                | SqvarError::NonInvertible
                | SqvarError::Diverged { .. }
                | SqvarError::NotStabilized { .. },
            ) => 1,
            _ => 2,
        }
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
