//! JSON error bodies: `{"error": ..., "stage": ..., "detail": ...}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ctview_core::pipeline::Stage;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: &'static str,
    pub stage: Option<Stage>,
    pub detail: String,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<Stage>,
    detail: &'a str,
}

impl ApiError {
    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, error: "bad_request", stage: None, detail: detail.into() }
    }

    pub fn not_found(id: &str) -> Self {
        Self { status: StatusCode::NOT_FOUND, error: "not_found", stage: None, detail: format!("no case with id {id:?}") }
    }

    pub fn unavailable(stage: Stage, detail: impl Into<String>) -> Self {
        Self { status: StatusCode::CONFLICT, error: "unavailable", stage: Some(stage), detail: detail.into() }
    }

    pub fn pipeline(status: StatusCode, stage: Stage, detail: impl Into<String>) -> Self {
        Self { status, error: "pipeline_failed", stage: Some(stage), detail: detail.into() }
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, error: "internal", stage: None, detail: detail.into() }
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = Some(stage);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body { error: self.error, stage: self.stage, detail: &self.detail };
        (self.status, Json(body)).into_response()
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status.as_u16(), self.error, self.detail)
    }
}

impl std::error::Error for ApiError {}
