//! Command errors and their process exit codes.

use knowpat_core::data_io::DataError;
use knowpat_core::eval::EvalError;
use knowpat_core::prefset::PrefsetError;
use knowpat_core::retrieval::RetrievalError;
use knowpat_core::trainer::TrainError;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad configuration, inputs or artifacts.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for failures while doing the work.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Prefixes the message with the question it concerns.
    pub fn context(self, question_id: &str) -> Self {
        match self {
            CliError::Validation(m) => {
                CliError::Validation(format!("question `{question_id}`: {m}"))
            }
            CliError::Runtime(m) => CliError::Runtime(format!("question `{question_id}`: {m}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Encoder(_) | RetrievalError::IndexFile(_) => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PrefsetError> for CliError {
    fn from(e: PrefsetError) -> Self {
        match e {
            PrefsetError::Data(d) => d.into(),
            PrefsetError::Generation { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Perplexity { .. } => CliError::Runtime(e.to_string()),
            EvalError::Data(d) => d.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
