use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use stepwise_core::api::{ErrorBody, ErrorDetail};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown seed `{0}`")]
    UnknownSeed(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown transcript `{0}`")]
    UnknownTranscript(String),
    #[error("session `{0}` is closed")]
    SessionClosed(String),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("questionnaire `{id}` was already submitted by rater `{rater}`")]
    DuplicateSubmission { id: String, rater: String },
    #[error("invalid questionnaire: {0}")]
    InvalidQuestionnaire(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSeed(_) => "UnknownSeed",
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::UnknownTranscript(_) => "UnknownTranscript",
            ServiceError::SessionClosed(_) => "SessionClosed",
            ServiceError::EmptyMessage => "EmptyMessage",
            ServiceError::DuplicateSubmission { .. } => "DuplicateSubmission",
            ServiceError::InvalidQuestionnaire(_) => "InvalidQuestionnaire",
            ServiceError::InvalidRequest(_) => "InvalidRequest",
            ServiceError::Storage(_) => "Storage",
            ServiceError::Backend(_) => "Backend",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSeed(_) | ServiceError::UnknownSession(_) | ServiceError::UnknownTranscript(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::SessionClosed(_) | ServiceError::DuplicateSubmission { .. } => StatusCode::CONFLICT,
            ServiceError::EmptyMessage | ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::InvalidQuestionnaire(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) | ServiceError::Backend(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code().to_string(),
                message: self.to_string(),
            },
        };
        (self.status(), Json(body)).into_response()
    }
}
