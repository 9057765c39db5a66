use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    Invalid(String),

    #[error("patient {0:?} not found")]
    NotFound(String),

    #[error("patient {0:?} already exists")]
    Duplicate(String),

    #[error("missing or wrong API token")]
    Unauthorized,

    #[error("event store {}: {source}", path.display())]
    Store {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt event store {}, line {line}: {reason}", path.display())]
    Corrupt { path: PathBuf, line: usize, reason: String },

    #[error(transparent)]
    Engine(#[from] titration_core::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use titration_core::Error as E;
        match self {
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Duplicate(_) => StatusCode::CONFLICT,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Engine(E::InvalidArgument(_) | E::Config(_) | E::InvalidDrug { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}
