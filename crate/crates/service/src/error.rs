use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use claimloop_core::arbitration::ArbitrationError;
use claimloop_core::engine::EngineError;
use claimloop_core::memory::MemoryError;

use crate::config::ConfigError;
use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{message}")]
    BadRequest {
        message: String,
        field: Option<String>,
    },
    #[error("{0}")]
    NotFound(String),
    #[error("no memory in {0}; run ingest first")]
    NoMemory(PathBuf),
    #[error("{message}")]
    Conflict {
        code: &'static str,
        message: String,
        field: Option<String>,
    },
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("log replay failed at seq {seq}: {reason}")]
    Replay { seq: u64, reason: String },
    #[error("{0}")]
    Internal(String),
}

/// Wire form of every API error.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ServiceError {
    pub fn bad_request(message: impl Into<String>, field: Option<&str>) -> Self {
        ServiceError::BadRequest {
            message: message.into(),
            field: field.map(str::to_owned),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::BadRequest { .. } => "bad_request",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::NoMemory(_) => "no_memory",
            ServiceError::Conflict { code, .. } => code,
            ServiceError::Backend(_) => "backend_unavailable",
            ServiceError::Config(_) => "config",
            ServiceError::Store(_) => "storage",
            ServiceError::Replay { .. } => "replay",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::BadRequest { .. } => 400,
            ServiceError::NotFound(_) | ServiceError::NoMemory(_) => 404,
            ServiceError::Conflict { .. } => 409,
            ServiceError::Backend(_) => 503,
            _ => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let field = match self {
            ServiceError::BadRequest { field, .. } | ServiceError::Conflict { field, .. } => {
                field.clone()
            }
            _ => None,
        };
        ErrorBody {
            code: self.code().to_owned(),
            message: self.to_string(),
            field,
        }
    }
}

fn conflict(code: &'static str, message: String, field: Option<&str>) -> ServiceError {
    ServiceError::Conflict {
        code,
        message,
        field: field.map(str::to_owned),
    }
}

impl From<MemoryError> for ServiceError {
    fn from(e: MemoryError) -> Self {
        let msg = e.to_string();
        match e {
            MemoryError::UnknownClaim(_) | MemoryError::FutureVersion { .. } => {
                ServiceError::NotFound(msg)
            }
            MemoryError::Locked(_) => conflict("locked", msg, None),
            MemoryError::HumanOwned(_) => conflict("human_owned", msg, None),
            MemoryError::Authority { .. } => conflict("authority", msg, None),
            MemoryError::InvalidEdit(_) => ServiceError::bad_request(msg, Some("value")),
            MemoryError::Replay { seq, reason } => ServiceError::Replay { seq, reason },
            _ => ServiceError::Internal(msg),
        }
    }
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Memory(m) | EngineError::Arbitration(ArbitrationError::Memory(m)) => {
                m.into()
            }
            EngineError::Arbitration(a) => {
                let msg = a.to_string();
                match a {
                    ArbitrationError::NotOpen(_) => conflict("stale", msg, None),
                    ArbitrationError::Mismatch { .. } => conflict("mismatch", msg, Some("type")),
                    ArbitrationError::NotOffered(_) => {
                        ServiceError::bad_request(msg, Some("value"))
                    }
                    ArbitrationError::Memory(_) => unreachable!("matched above"),
                }
            }
            EngineError::Config(m) => ServiceError::Internal(m),
        }
    }
}
