use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Uniform error body: `{code, message, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

pub type ApiResult<T> = Result<T, ApiError>;

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn not_found(what: &str, id: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id} not found"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<geolatent::Error> for ApiError {
    fn from(e: geolatent::Error) -> Self {
        use geolatent::Error as E;
        let message = e.to_string();
        match &e {
            E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::EmptyPatch { .. } => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_argument", message)
            }
            E::InsufficientData { needed, got } => Self::new(StatusCode::BAD_REQUEST, "insufficient_data", message)
                .with_detail(serde_json::json!({ "needed": needed, "got": got })),
            E::UnknownNode(id) => Self::new(StatusCode::NOT_FOUND, "unknown_node", message).with_detail(serde_json::json!({ "node": id })),
            E::NotLeaf(id) => Self::conflict("not_leaf", message).with_detail(serde_json::json!({ "node": id })),
            E::NoChildren(id) => Self::conflict("no_children", message).with_detail(serde_json::json!({ "node": id })),
            E::HasGrandchildren(id) => Self::conflict("has_grandchildren", message).with_detail(serde_json::json!({ "node": id })),
            E::Io { .. } | E::Parse { .. } | E::Format(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unreadable_input", message),
            _ => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
