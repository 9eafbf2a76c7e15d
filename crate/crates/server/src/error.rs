use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use losslens::Error;
use serde::Serialize;
use serde_json::{json, Value};

/// JSON error body: `{"error": {"kind", "message", "field"?, "details"?}}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub field: Option<String>,
    pub details: Option<Value>,
}

#[derive(Serialize)]
struct Body<'a> {
    kind: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<&'a Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            field: None,
            details: None,
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("{what} `{id}` does not exist"),
        )
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_argument", message).with_field(field)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    /// Sets the field only if the error does not already name one.
    pub fn in_field(mut self, field: &str) -> Self {
        if self.field.is_none() {
            self.field = Some(field.to_string());
        }
        self
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.body() })
    }

    fn body(&self) -> Body<'_> {
        Body {
            kind: self.kind,
            message: &self.message,
            field: self.field.as_deref(),
            details: self.details.as_ref(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidArgument { field, .. } => ApiError::invalid(field, message),
            Error::Dimension { .. } => ApiError::new(StatusCode::BAD_REQUEST, "dimension", message),
            Error::Parse(p) => ApiError {
                details: Some(json!({ "position": p.position })),
                ..ApiError::new(StatusCode::BAD_REQUEST, "syntax", message)
            },
            Error::Eval(ev) => ApiError {
                details: Some(json!({ "node": ev.node, "x": ev.x, "y": ev.y })),
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "domain", message)
            },
            Error::Divergence { epoch } => ApiError {
                details: Some(json!({ "epoch": epoch })),
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "divergence", message)
            },
            Error::Capability(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "capability", message)
            }
            Error::IncompatibleArch { .. } => {
                ApiError::new(StatusCode::CONFLICT, "incompatible_architecture", message)
            }
            Error::Format { line, column, .. } => ApiError {
                details: Some(json!({ "line": line, "column": column })),
                ..ApiError::new(StatusCode::BAD_REQUEST, "format", message)
            },
            Error::Cancelled => ApiError::new(StatusCode::CONFLICT, "cancelled", message),
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
            }
            Error::Io(_) => ApiError::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.to_json())).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
