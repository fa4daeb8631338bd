use std::fmt;

use storyreel_core::artifact::StoreError;
use storyreel_core::domain::DomainError;
use storyreel_core::evaluation::EvalError;
use storyreel_core::production::ProductionError;
use storyreel_core::prompt::PromptError;
use storyreel_core::rag::RagError;
use storyreel_core::utility::RegistryError;
use storyreel_core::workflow::WorkflowError;

use crate::config::ConfigError;
use crate::project::ProjectStatus;

/// Broad class of a failure; the HTTP layer maps it to a status code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Invalid,
    Internal,
}

/// A failure with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub code: &'static str,
    pub message: String,
}

impl ServiceError {
    pub fn new(kind: ErrorKind, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, code, message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Conflict, code, message)
    }

    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Invalid, code, message)
    }

    pub fn internal(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, code, message)
    }

    pub fn transition(project: &str, status: ProjectStatus, action: &str) -> Self {
        Self::conflict(
            "invalid_transition",
            format!("cannot {action} project {project}: status is {status}"),
        )
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ServiceError {}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::internal("io_error", e.to_string())
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound(_) => Self::not_found("artifact_not_found", e.to_string()),
            StoreError::Integrity { .. } => Self::internal("integrity_error", e.to_string()),
            _ => Self::internal("store_error", e.to_string()),
        }
    }
}

impl From<RagError> for ServiceError {
    fn from(e: RagError) -> Self {
        match &e {
            RagError::DuplicateDoc(_) => Self::conflict("duplicate_doc", e.to_string()),
            RagError::EmptyText => Self::invalid("empty_text", e.to_string()),
            RagError::NotFound(_) => Self::not_found("entry_not_found", e.to_string()),
            RagError::InvalidFeedback(_) => Self::invalid("invalid_feedback", e.to_string()),
            RagError::Synthesizer(_) => Self::internal("synthesizer_failed", e.to_string()),
            _ => Self::internal("rag_error", e.to_string()),
        }
    }
}

impl From<EvalError> for ServiceError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownTarget(_) => Self::not_found("unknown_target", e.to_string()),
            EvalError::ScoreOutOfRange { .. } => Self::invalid("score_out_of_range", e.to_string()),
            EvalError::WeightInvalid(_) | EvalError::EmptyInput => Self::invalid("invalid_scores", e.to_string()),
            EvalError::Rag(r) => r.into(),
            EvalError::Io(io) => io.into(),
        }
    }
}

impl From<DomainError> for ServiceError {
    fn from(e: DomainError) -> Self {
        Self::invalid("schema_violation", e.to_string())
    }
}

impl From<WorkflowError> for ServiceError {
    fn from(e: WorkflowError) -> Self {
        match e {
            WorkflowError::Rag(r) => r.into(),
            WorkflowError::PlannerOutputUnparseable { .. } | WorkflowError::CyclicWorkflow(_) => {
                Self::internal("planner_failed", e.to_string())
            }
            WorkflowError::Adapter(_) => Self::internal("adapter_failed", e.to_string()),
            _ => Self::conflict("workflow_version", e.to_string()),
        }
    }
}

impl From<PromptError> for ServiceError {
    fn from(e: PromptError) -> Self {
        Self::invalid("bad_template", e.to_string())
    }
}

impl From<RegistryError> for ServiceError {
    fn from(e: RegistryError) -> Self {
        Self::invalid("bad_utility", e.to_string())
    }
}

impl From<ProductionError> for ServiceError {
    fn from(e: ProductionError) -> Self {
        match e {
            ProductionError::Store(s) => s.into(),
            ProductionError::Rag(r) => r.into(),
            other => Self::internal("production_error", other.to_string()),
        }
    }
}

impl From<ConfigError> for ServiceError {
    fn from(e: ConfigError) -> Self {
        Self::invalid("bad_config", e.to_string())
    }
}
