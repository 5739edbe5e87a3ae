use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use contexp_core::raw::{KnobBounds, MAX_BRIGHTNESS_RATIO};
use contexp_core::Error;
use serde_json::{json, Value};

/// An HTTP error with a JSON body `{"error": ..., ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    pub fn unknown_asset(kind: &str, name: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: json!({ "error": format!("unknown {kind} `{name}`"), "asset": name }),
        }
    }

    pub fn unknown_session(id: u64) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }

    /// 400 for a knob outside the legal range, echoing that range.
    pub fn knob(message: String, bounds: KnobBounds) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({
                "error": message,
                "alpha1_range": [1.0, MAX_BRIGHTNESS_RATIO],
                "alpha2_range": [bounds.alpha2_min, bounds.alpha2_max],
            }),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn from_core(e: Error, bounds: KnobBounds) -> Self {
        match e {
            Error::Knob(m) => Self::knob(m, bounds),
            Error::Indivisible { .. } | Error::Raw(_) | Error::Format { .. } | Error::Model(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
