use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use copper_core::engine::EngineError;
use serde::Serialize;

/// Error document returned by every route.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: "bad_request", message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message: message.into() }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use EngineError::*;
        let (status, code) = match &e {
            NotFound(_) | UnknownJob(_) => (StatusCode::NOT_FOUND, "not_found"),
            DuplicateResult(_) => (StatusCode::CONFLICT, "duplicate_result"),
            JobClosed(_) => (StatusCode::CONFLICT, "job_closed"),
            AlreadyClaimed(_) => (StatusCode::CONFLICT, "already_claimed"),
            BudgetExhausted => (StatusCode::CONFLICT, "budget_exhausted"),
            InvalidRequest(_) | Space(_) | Quality(_) | Sla(_) | Sampler(_) => (StatusCode::BAD_REQUEST, "invalid"),
            Corrupt(_) | Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self { status, code, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: ErrorDetail { code: self.code.to_string(), message: self.message } };
        (self.status, Json(body)).into_response()
    }
}

/// Why the service could not start or stopped.
#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot recover state: {0}")]
    Recovery(EngineError),
}
