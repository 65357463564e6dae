use std::path::{Path, PathBuf};

use cmts_core::csvio::CsvError;
use cmts_core::{CausalError, DataError, GraphError, MetricError};
use cmts_model::ModelError;
use cmts_nn::NnError;
use cmts_train::TrainError;
use thiserror::Error;

/// Process exit codes. These are part of the command-line contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const COMPATIBILITY: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Compatibility(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::Compatibility(_) => exit::COMPATIBILITY,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            TrainError::Model(m) => m.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Nn(NnError::NonFinite(_) | NnError::NonFiniteGradient(_)) => CliError::Numeric(e.to_string()),
            ModelError::Checkpoint(_) | ModelError::Header(_) | ModelError::VariableCount { .. } => {
                CliError::Compatibility(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        })*
    };
}

validation_from!(DataError, GraphError, CausalError, MetricError, cmts_core::plant::PlantError, cmts_model::TokenizerError);

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        match e {
            CsvError::Io(source) => CliError::Io {
                path: PathBuf::from("<csv>"),
                source,
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}
