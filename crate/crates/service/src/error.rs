use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "PreconditionFailed", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "SessionNotFound", format!("no session {id}"))
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "NotFound" | "SessionNotFound" => StatusCode::NOT_FOUND,
        "CapacityExceeded" => StatusCode::SERVICE_UNAVAILABLE,
        "ProviderFailure" => StatusCode::BAD_GATEWAY,
        "StalePlanError" | "NothingToUndo" | "PreconditionFailed" => StatusCode::CONFLICT,
        "IoFailure" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<casement_core::Error> for ApiError {
    fn from(e: casement_core::Error) -> Self {
        let code = e.code();
        Self::new(status_for(code), code, e.to_string())
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                casement_core::Error::from(e).into()
            }
        }
    )*};
}

via_core!(
    casement_core::GlbError,
    casement_core::GeometryError,
    casement_core::SegmentationError,
    casement_core::RetrievalError,
    casement_core::ReplacementError,
    casement_core::CatalogError
);

impl From<crate::generator::ProviderFailure> for ApiError {
    fn from(e: crate::generator::ProviderFailure) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, "ProviderFailure", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
