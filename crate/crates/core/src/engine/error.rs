use serde::Serialize;
use thiserror::Error;

use crate::concept::ConceptError;
use crate::eval::EvalError;
use crate::gateway::GatewayError;
use crate::index::IndexError;
use crate::ingest::IngestError;
use crate::instance::InstanceError;
use crate::qa::{QaError, TemplateError};
use crate::retriever::RetrievalError;
use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("missing prerequisite: run `{stage}` first")]
    Dependency { stage: &'static str },
    #[error("{stage} output is stale against the current corpus: rerun `{stage}`")]
    Stale { stage: &'static str },
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("unknown {kind} '{id}'")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    Locked(String),
    #[error("storage error: {0}")]
    Storage(String),
}

/// Machine-readable error body shared by the CLI and the HTTP API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Config(_) => "config",
            EngineError::Input(_) => "invalid_input",
            EngineError::Dependency { .. } => "dependency_missing",
            EngineError::Stale { .. } => "stale",
            EngineError::Provider(_) => "provider",
            EngineError::NotFound { .. } => "not_found",
            EngineError::Locked(_) => "locked",
            EngineError::Storage(_) => "storage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) => 2,
            EngineError::Dependency { .. } => 3,
            EngineError::Stale { .. } => 4,
            EngineError::Provider(_) => 5,
            EngineError::Input(_) | EngineError::NotFound { .. } => 6,
            EngineError::Locked(_) | EngineError::Storage(_) => 1,
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            EngineError::Input(_) => 400,
            EngineError::NotFound { .. } => 404,
            EngineError::Dependency { .. } | EngineError::Stale { .. } | EngineError::Locked(_) => 409,
            EngineError::Provider(_) => 502,
            EngineError::Config(_) | EngineError::Storage(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code(),
            message: self.to_string(),
        }
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Locked { .. } => EngineError::Locked(e.to_string()),
            other => EngineError::Storage(other.to_string()),
        }
    }
}

impl From<GatewayError> for EngineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(m) => EngineError::Config(m),
            other => EngineError::Provider(other.to_string()),
        }
    }
}

impl From<IngestError> for EngineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Policy(m) => EngineError::Config(m),
            other => EngineError::Input(other.to_string()),
        }
    }
}

impl From<ConceptError> for EngineError {
    fn from(e: ConceptError) -> Self {
        match e {
            ConceptError::Gateway { .. } => EngineError::Provider(e.to_string()),
            ConceptError::Store(s) => s.into(),
            other => EngineError::Input(other.to_string()),
        }
    }
}

impl From<InstanceError> for EngineError {
    fn from(e: InstanceError) -> Self {
        match e {
            InstanceError::Gateway { .. } => EngineError::Provider(e.to_string()),
            InstanceError::Store(s) => s.into(),
            other => EngineError::Input(other.to_string()),
        }
    }
}

impl From<IndexError> for EngineError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Gateway(g) => g.into(),
            IndexError::Store(s) => s.into(),
            IndexError::Config(m) => EngineError::Config(m),
            IndexError::Input(m) => EngineError::Input(m),
        }
    }
}

impl From<RetrievalError> for EngineError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::EmptyQuery => EngineError::Input(e.to_string()),
            RetrievalError::Config(m) => EngineError::Config(m),
        }
    }
}

impl From<QaError> for EngineError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Retrieval(r) => r.into(),
        }
    }
}

impl From<EvalError> for EngineError {
    fn from(e: EvalError) -> Self {
        EngineError::Input(e.to_string())
    }
}

impl From<TemplateError> for EngineError {
    fn from(e: TemplateError) -> Self {
        EngineError::Config(e.to_string())
    }
}
