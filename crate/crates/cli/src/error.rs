use std::fmt;
use std::path::Path;

use ctxprop_core::dataset::DatasetError;
use ctxprop_core::{EvalError, GeometryError, KdeError, ProposalError, TopicError};

/// A failure reported as one line: `error: <kind>: <message>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn exit_code(&self) -> i32 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self
            .message
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        write!(f, "error: {}: {one_line}", self.kind)
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let kind = match e {
            DatasetError::Io { .. } => "io",
            DatasetError::InvalidSpec(_) => "config",
            _ => "dataset",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<KdeError> for CliError {
    fn from(e: KdeError) -> Self {
        let kind = match e {
            KdeError::EmptyTrainingSet => "empty-training-set",
            _ => "model",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TopicError> for CliError {
    fn from(e: TopicError) -> Self {
        let kind = match e {
            TopicError::EmptyCorpus => "empty-corpus",
            _ => "model",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        Self::new("geometry", e.to_string())
    }
}

impl From<ProposalError> for CliError {
    fn from(e: ProposalError) -> Self {
        let kind = match e {
            ProposalError::ModelMissing(..) => "model-missing",
            ProposalError::ModelMismatch { .. } => "model-mismatch",
            ProposalError::InvalidRequest(_) => "config",
            ProposalError::Geometry(_) => "geometry",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let kind = match e {
            EvalError::NoAnnotations => "no-annotations",
            EvalError::InvalidThreshold(_) | EvalError::BudgetsNotAscending => "config",
            EvalError::Csv(_) | EvalError::CsvFormat { .. } => "csv",
        };
        Self::new(kind, e.to_string())
    }
}
