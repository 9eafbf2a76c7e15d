//! HTTP/JSON service over the `losslens` engine.
//!
//! State lives in memory: sessions hold an architecture, datasets, target
//! points, focus-point sets and runs. Long computations run as jobs that
//! clients poll under `/jobs/{id}`.

use std::future::Future;
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::Router;
use indexmap::IndexMap;
use tokio::net::TcpListener;

pub mod cache;
pub mod config;
pub mod error;
pub mod extract;
pub mod idempotency;
pub mod jobs;
pub mod routes;
pub mod session;
pub mod views;

pub use config::Config;
pub use error::{ApiError, ApiResult};

use idempotency::IdempotencyStore;
use jobs::Jobs;
use session::Session;

pub type SharedSession = Arc<Mutex<Session>>;

pub struct Inner {
    pub config: Config,
    pub sessions: Mutex<IndexMap<String, SharedSession>>,
    pub jobs: Arc<Jobs>,
    pub idempotency: IdempotencyStore,
    next_session: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl Deref for AppState {
    type Target = Inner;

    fn deref(&self) -> &Inner {
        &self.0
    }
}

impl AppState {
    pub fn new(config: Config) -> Self {
        let jobs = Arc::new(Jobs::new(config.max_jobs as usize));
        Self(Arc::new(Inner {
            config,
            sessions: Mutex::new(IndexMap::new()),
            jobs,
            idempotency: IdempotencyStore::default(),
            next_session: AtomicU64::new(1),
        }))
    }

    pub fn next_session_id(&self) -> String {
        format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed))
    }

    pub fn sessions(&self) -> MutexGuard<'_, IndexMap<String, SharedSession>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn session(&self, id: &str) -> ApiResult<SharedSession> {
        self.sessions()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }
}

/// Locks a session, recovering from a poisoned mutex.
pub fn lock(session: &SharedSession) -> MutexGuard<'_, Session> {
    session.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn app(state: AppState) -> Router {
    routes::router()
        .layer(axum::middleware::from_fn_with_state(
            state.clone(),
            idempotency::middleware,
        ))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    config: Config,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let router = app(AppState::new(config));
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}
