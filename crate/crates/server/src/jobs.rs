//! Background jobs: training runs and large views. At most `max_jobs` run
//! at once; the rest wait in FIFO order.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use indexmap::IndexMap;
use losslens::control::Control;
use losslens::optimizer::TrainMonitor;
use serde::Serialize;
use serde_json::value::RawValue;
use tokio::sync::Semaphore;

use crate::error::{ApiError, ApiResult};

/// Finished jobs kept for polling before the oldest are dropped.
const RETAINED: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(
            self,
            JobStatus::Succeeded | JobStatus::Failed | JobStatus::Cancelled
        )
    }
}

/// Where progress is read from.
#[derive(Clone)]
pub enum ProgressSource {
    Control(Arc<Control>),
    Training {
        monitor: Arc<TrainMonitor>,
        epochs: usize,
    },
}

struct Entry {
    kind: &'static str,
    session_id: String,
    status: JobStatus,
    control: Arc<Control>,
    progress: ProgressSource,
    result: Option<Bytes>,
    error: Option<ApiError>,
}

#[derive(Serialize)]
struct StatusBody<'a> {
    id: &'a str,
    kind: &'a str,
    session_id: &'a str,
    status: JobStatus,
    progress: ProgressBody,
    result: Option<&'a RawValue>,
    error: Option<serde_json::Value>,
}

#[derive(Serialize)]
struct ProgressBody {
    done: usize,
    total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
}

pub struct Jobs {
    entries: Mutex<IndexMap<String, Entry>>,
    next: AtomicU64,
    permits: Arc<Semaphore>,
}

impl Jobs {
    pub fn new(max_jobs: usize) -> Self {
        Self {
            entries: Mutex::new(IndexMap::new()),
            next: AtomicU64::new(1),
            permits: Arc::new(Semaphore::new(max_jobs.max(1))),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, IndexMap<String, Entry>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a job and starts it once a slot is free. `work` runs on a
    /// blocking thread.
    pub fn spawn<F>(
        self: &Arc<Self>,
        kind: &'static str,
        session_id: &str,
        control: Arc<Control>,
        progress: ProgressSource,
        work: F,
    ) -> String
    where
        F: FnOnce() -> ApiResult<Bytes> + Send + 'static,
    {
        let id = format!("job{}", self.next.fetch_add(1, Ordering::Relaxed));
        {
            let mut entries = self.lock();
            if entries.len() >= RETAINED {
                if let Some(old) = entries.iter().position(|(_, e)| e.status.is_finished()) {
                    entries.shift_remove_index(old);
                }
            }
            entries.insert(
                id.clone(),
                Entry {
                    kind,
                    session_id: session_id.to_string(),
                    status: JobStatus::Queued,
                    control: control.clone(),
                    progress,
                    result: None,
                    error: None,
                },
            );
        }
        let jobs = Arc::clone(self);
        let job_id = id.clone();
        tokio::spawn(async move {
            let _permit = jobs
                .permits
                .clone()
                .acquire_owned()
                .await
                .expect("semaphore is never closed");
            if control.is_cancelled() {
                jobs.finish(&job_id, JobStatus::Cancelled, None, None);
                return;
            }
            jobs.set_status(&job_id, JobStatus::Running);
            let outcome = tokio::task::spawn_blocking(work).await;
            match outcome {
                Ok(Ok(bytes)) => {
                    let status = if control.is_cancelled() {
                        JobStatus::Cancelled
                    } else {
                        JobStatus::Succeeded
                    };
                    jobs.finish(&job_id, status, Some(bytes), None);
                }
                Ok(Err(e)) if e.kind == "cancelled" => {
                    jobs.finish(&job_id, JobStatus::Cancelled, None, Some(e))
                }
                Ok(Err(e)) => jobs.finish(&job_id, JobStatus::Failed, None, Some(e)),
                Err(join) => jobs.finish(
                    &job_id,
                    JobStatus::Failed,
                    None,
                    Some(ApiError::internal(join.to_string())),
                ),
            }
        });
        id
    }

    fn set_status(&self, id: &str, status: JobStatus) {
        if let Some(e) = self.lock().get_mut(id) {
            e.status = status;
        }
    }

    fn finish(&self, id: &str, status: JobStatus, result: Option<Bytes>, error: Option<ApiError>) {
        if let Some(e) = self.lock().get_mut(id) {
            e.status = status;
            e.result = result;
            e.error = error;
        }
    }

    /// Requests cancellation; queued jobs never start, running ones stop at
    /// their next checkpoint.
    pub fn cancel(&self, id: &str) -> ApiResult<JobStatus> {
        let mut entries = self.lock();
        let e = entries
            .get_mut(id)
            .ok_or_else(|| ApiError::not_found("job", id))?;
        if !e.status.is_finished() {
            e.control.cancel();
            if let ProgressSource::Training { monitor, .. } = &e.progress {
                monitor.cancel();
            }
            if e.status == JobStatus::Queued {
                e.status = JobStatus::Cancelled;
            }
        }
        Ok(e.status)
    }

    pub fn cancel_session(&self, session_id: &str) {
        let ids: Vec<String> = self
            .lock()
            .iter()
            .filter(|(_, e)| e.session_id == session_id && !e.status.is_finished())
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let _ = self.cancel(&id);
        }
    }

    pub fn status(&self, id: &str) -> ApiResult<JobStatus> {
        self.lock()
            .get(id)
            .map(|e| e.status)
            .ok_or_else(|| ApiError::not_found("job", id))
    }

    /// Status document; a finished job embeds its result payload verbatim.
    pub fn status_json(&self, id: &str) -> ApiResult<Vec<u8>> {
        let entries = self.lock();
        let e = entries
            .get(id)
            .ok_or_else(|| ApiError::not_found("job", id))?;
        let progress = match &e.progress {
            ProgressSource::Control(c) => {
                let (done, total) = c.progress();
                ProgressBody {
                    done,
                    total,
                    loss: None,
                }
            }
            ProgressSource::Training { monitor, epochs } => {
                let snap = monitor.snapshot();
                ProgressBody {
                    done: snap.epoch,
                    total: *epochs,
                    loss: (snap.epoch > 0).then_some(snap.loss),
                }
            }
        };
        let raw = match &e.result {
            Some(bytes) => Some(
                serde_json::from_slice::<&RawValue>(bytes)
                    .map_err(|err| ApiError::internal(err.to_string()))?,
            ),
            None => None,
        };
        let body = StatusBody {
            id,
            kind: e.kind,
            session_id: &e.session_id,
            status: e.status,
            progress,
            result: raw,
            error: e.error.as_ref().map(|err| err.to_json()["error"].clone()),
        };
        serde_json::to_vec(&body).map_err(|err| ApiError::internal(err.to_string()))
    }

    /// The finished payload, byte for byte.
    pub fn result(&self, id: &str) -> ApiResult<Bytes> {
        let entries = self.lock();
        let e = entries
            .get(id)
            .ok_or_else(|| ApiError::not_found("job", id))?;
        match (&e.result, &e.error) {
            (Some(bytes), _) => Ok(bytes.clone()),
            (None, Some(err)) => Err(err.clone()),
            (None, None) => Err(ApiError::conflict(format!("job `{id}` has not finished"))),
        }
    }
}
