//! Pipeline orchestration for `qflake`: configuration, subcommands and the
//! triage HTTP service.

pub mod commands;
pub mod config;
pub mod labels;
pub mod triage;

use qflake_core::corpus::{FetchError, SnapshotError};
use qflake_core::evaluator::EvalError;
use qflake_core::inference::InferenceError;
use qflake_core::simsearch::SimError;
use qflake_core::store::StoreError;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Dataset or input data failed validation.
    #[error("{0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// A remote service (hosting API, embedding or model provider) failed.
    #[error("provider failure: {0}")]
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Config(format!("{}: {e}", path.display()))
    }
}

impl From<FetchError> for CliError {
    fn from(e: FetchError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<SnapshotError> for CliError {
    fn from(e: SnapshotError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Provider(_) => CliError::Provider(e.to_string()),
            SimError::BadThreshold(_) => CliError::Config(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::BudgetExceeded { .. } | InferenceError::Store(_) => CliError::Config(e.to_string()),
            _ => CliError::Provider(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Inference(i) => i.into(),
            EvalError::Config(_) | EvalError::Prompt(_) => CliError::Config(e.to_string()),
            EvalError::KeyMismatch(_) | EvalError::Undefined(_) => CliError::Validation(e.to_string()),
        }
    }
}
