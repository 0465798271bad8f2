use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidActionShape,
    SessionNotFound,
    EpisodeDone,
    BadRequest,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::InvalidActionShape | ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::SessionNotFound => StatusCode::NOT_FOUND,
            ErrorCode::EpisodeDone => StatusCode::CONFLICT,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Body of every non-success response.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(
            ErrorCode::SessionNotFound,
            format!("no live session {id:?}"),
        )
    }
}

impl From<adsim_core::Error> for ApiError {
    fn from(e: adsim_core::Error) -> Self {
        use adsim_core::Error as E;
        let code = match &e {
            E::EpisodeDone => ErrorCode::EpisodeDone,
            E::InvalidInput(_)
            | E::Dimension { .. }
            | E::Schema(_)
            | E::Space { .. }
            | E::MissingStartModel(_)
            | E::NonFinite(_) => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}
