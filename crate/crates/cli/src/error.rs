use std::fmt;

use danli::data::DataError;
use danli::embeddings::EmbeddingError;
use danli::model::ModelError;
use danli::numerics::NumericsError;
use danli::trainer::{CheckpointError, TrainError};

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 1.
    Usage(String),
    /// Unreadable, malformed or empty inputs: exit 2.
    Data(String),
    /// Non-finite values or other numeric failures: exit 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_)
            | ModelError::ParamShape { .. }
            | ModelError::LabelOutOfRange(_) => CliError::Usage(e.to_string()),
            ModelError::Embedding(_) => CliError::Data(e.to_string()),
            ModelError::Numerics(_) | ModelError::NonFinite(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Numerics(n) => n.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::EmptyDataset(_) => CliError::Data(e.to_string()),
            TrainError::NonFinite(_) | TrainError::Diverged { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
