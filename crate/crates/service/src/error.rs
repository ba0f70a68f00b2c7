use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Range(String),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Core(#[from] pdm_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.into(), source }
    }

    pub fn status(&self) -> StatusCode {
        use pdm_core::Error as E;
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) | ServiceError::Range(_) => StatusCode::BAD_REQUEST,
            ServiceError::Shape(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Core(
                E::Shape(_) | E::Unlabeled | E::EmptyClassIndex(_) | E::DegenerateLabels(_) | E::Config(_),
            ) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Core(_) | ServiceError::Io { .. } | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Range(_) => "range_error",
            ServiceError::Shape(_) => "shape_error",
            ServiceError::Core(pdm_core::Error::Shape(_)) => "shape_error",
            ServiceError::Core(_) => "model_error",
            ServiceError::Io { .. } | ServiceError::Internal(_) => "internal",
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.code(), message: self.to_string() };
        (self.status(), Json(body)).into_response()
    }
}
