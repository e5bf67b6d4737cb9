use std::path::PathBuf;

use infosplit_core::Error as CoreError;

/// Process exit codes. Stable; documented in the README.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    /// A verify check or a Monte Carlo expectation check failed.
    CheckFailed = 1,
    Config = 2,
    Data = 3,
    /// The solver hit `max_iter`.
    MaxIter = 4,
    /// Singular curvature or another numerical breakdown.
    Numerical = 5,
    /// Converged onto the boundary of the feasible region.
    Boundary = 6,
    Io = 7,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing column `{0}` in dataset header")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumericValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::Config,
            CliError::MissingColumn(_) | CliError::NonNumericValue { .. } | CliError::Data(_) => {
                ExitCode::Data
            }
            CliError::Io { .. } => ExitCode::Io,
            CliError::Parse { .. } => ExitCode::Config,
            CliError::Core(e) => match e {
                CoreError::InfeasibleParams { .. }
                | CoreError::IndexOutOfRange { .. }
                | CoreError::InvalidStep(_)
                | CoreError::StatisticalFloor { .. } => ExitCode::Config,
                CoreError::DimensionMismatch { .. }
                | CoreError::InvalidDataset(_)
                | CoreError::RankDeficientX { .. } => ExitCode::Data,
                CoreError::NotPositiveDefinite { .. }
                | CoreError::SingularCoefficientMatrix { .. }
                | CoreError::SingularCurvature { .. }
                | CoreError::Replicate { .. } => ExitCode::Numerical,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
