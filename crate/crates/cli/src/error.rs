use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Core(#[from] hfscat_core::Error),

    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input {0}; run the subcommand that produces it first")]
    MissingInput(String),

    #[error("{failed} of {total} checks failed in suite {suite}")]
    ChecksFailed {
        suite: String,
        failed: usize,
        total: usize,
    },
}

impl CliError {
    /// 2 for configuration errors, 4 for infeasible geometry, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use hfscat_core::Error as E;
        match self {
            CliError::Schema { .. } => 2,
            CliError::Core(E::Geometry(_) | E::Aliasing(_) | E::Transit(_) | E::OffLattice(_)) => 4,
            CliError::Core(E::Io(_)) | CliError::Io { .. } | CliError::MissingInput(_) => 1,
            CliError::Core(_) | CliError::ChecksFailed { .. } => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
