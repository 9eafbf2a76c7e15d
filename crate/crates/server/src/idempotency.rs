//! Replay of mutating requests under a client-supplied `Idempotency-Key`.
//!
//! The first response for `(method, path, key)` is stored. A retry with the
//! same body gets the stored response back; reusing the key with a
//! different body is rejected. Concurrent retries wait for the first.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::AppState;

pub const HEADER: &str = "idempotency-key";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";
const BODY_LIMIT: usize = 64 << 20;

#[derive(Clone)]
struct Stored {
    request_hash: [u8; 32],
    status: StatusCode,
    content_type: Option<HeaderValue>,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Stored>>>;

#[derive(Default)]
pub struct IdempotencyStore {
    slots: Mutex<HashMap<String, Slot>>,
}

impl IdempotencyStore {
    fn slot(&self, key: String) -> Slot {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        slots.entry(key).or_default().clone()
    }
}

pub async fn middleware(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(key) = req.headers().get(HEADER).cloned() else {
        return next.run(req).await;
    };
    if matches!(*req.method(), Method::GET | Method::HEAD | Method::OPTIONS) {
        return next.run(req).await;
    }
    let Ok(key) = key.to_str().map(str::to_owned) else {
        return ApiError::invalid(HEADER, "idempotency key must be visible ASCII").into_response();
    };
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::invalid("body", e.to_string()).into_response(),
    };
    let request_hash: [u8; 32] = Sha256::digest(&bytes).into();
    let slot = state
        .idempotency
        .slot(format!("{} {} {key}", parts.method, parts.uri.path()));
    let mut guard = slot.lock().await;
    if let Some(stored) = guard.as_ref() {
        if stored.request_hash != request_hash {
            return ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "idempotency_mismatch",
                "idempotency key was already used with a different request body",
            )
            .with_field(HEADER)
            .into_response();
        }
        let mut res = Response::new(Body::from(stored.body.clone()));
        *res.status_mut() = stored.status;
        if let Some(ct) = &stored.content_type {
            res.headers_mut()
                .insert(axum::http::header::CONTENT_TYPE, ct.clone());
        }
        res.headers_mut()
            .insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
        return res;
    }

    let res = next
        .run(Request::from_parts(parts, Body::from(bytes)))
        .await;
    let (parts, body) = res.into_parts();
    let body = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => return ApiError::internal(e.to_string()).into_response(),
    };
    // Server-side failures are not remembered so the client can retry.
    if !parts.status.is_server_error() {
        *guard = Some(Stored {
            request_hash,
            status: parts.status,
            content_type: parts.headers.get(axum::http::header::CONTENT_TYPE).cloned(),
            body: body.clone(),
        });
    }
    Response::from_parts(parts, Body::from(body))
}
