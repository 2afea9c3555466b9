use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HubError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("config: {0}")]
    Config(String),

    #[error("input: {0}")]
    Input(String),

    #[error("budget: {0}")]
    Budget(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("core: {0}")]
    Core(#[from] advsal_core::Error),
}

impl HubError {
    /// Short machine-readable category used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            HubError::Config(_) => "config",
            HubError::Input(_) => "input",
            HubError::Budget(_) => "budget",
            HubError::Io { .. } => "io",
            HubError::Core(_) => "core",
        }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HubError::Config(_) => 2,
            HubError::Input(_) | HubError::Io { .. } => 3,
            HubError::Budget(_) => 4,
            HubError::Core(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HubError::Io {
            path: path.into(),
            source,
        }
    }
}
