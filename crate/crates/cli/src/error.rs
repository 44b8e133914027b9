//! Failure kinds and their exit codes.

use ersinv::dataset::DatasetError;
use ersinv::forward::ForwardError;
use ersinv::train::TrainError;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or missing input; exit 2.
    Usage(String),
    /// Forward modelling failed; exit 3.
    Solver {
        index: Option<usize>,
        message: String,
    },
    /// Training hit a non-finite value; exit 4.
    NaN(String),
    /// Anything else, e.g. an output that could not be written; exit 1.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Solver { .. } => 3,
            Self::NaN(_) => 4,
            Self::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "{m}"),
            Self::Solver {
                index: Some(i),
                message,
            } => write!(f, "solver failure at sample {i}: {message}"),
            Self::Solver {
                index: None,
                message,
            } => write!(f, "solver failure: {message}"),
            Self::NaN(m) => write!(f, "training aborted: {m}"),
            Self::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<ForwardError> for CliError {
    fn from(e: ForwardError) -> Self {
        Self::Solver {
            index: None,
            message: e.to_string(),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(m) => Self::Usage(m),
            DatasetError::Forward { index, source } => Self::Solver {
                index: Some(index),
                message: source.to_string(),
            },
            DatasetError::Solver(source) => source.into(),
            e @ (DatasetError::Model { .. } | DatasetError::Feature { .. }) => Self::Solver {
                index: e.sample_index(),
                message: e.to_string(),
            },
            other => Self::Failed(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NaNDetected { .. } => Self::NaN(e.to_string()),
            TrainError::Config(_) | TrainError::ShapeMismatch(_) => Self::Usage(e.to_string()),
            other => Self::Failed(other.to_string()),
        }
    }
}

/// Output write failure.
pub fn write_failed(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("cannot write {}: {e}", path.display()))
}

/// Missing or unreadable input.
pub fn read_failed(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot read {}: {e}", path.display()))
}
