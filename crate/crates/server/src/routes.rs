use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::Response;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use losslens::control::Control;
use losslens::dataset::{prediction_grid, target_grid, Grid, DEFAULT_GRID_RESOLUTION};
use losslens::landscape::symmetric_offsets;
use losslens::optimizer::{
    checkpoint_epochs, train_monitored, Algorithm, TrainConfig, TrainMonitor,
};
use losslens::sampling::{projection_2d, sample_focus_points, SamplingAlgorithm, SamplingConfig};
use losslens::store::{self, Provenance, TargetPoint, FILE_SUFFIX};
use losslens::{Activation, LossKind, NetworkArch, WeightVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::{cache_key, CacheKey};
use crate::error::{ApiError, ApiResult};
use crate::extract::JsonBody;
use crate::jobs::ProgressSource;
use crate::session::{
    default_arch, now_ms, DataSpec, FocusSet, RunOutcome, RunRecord, RunState, Session, Snapshot,
};
use crate::views::{self, BACKGROUND_WORK};
use crate::{lock, AppState, SharedSession};

/// Upper bound on samples per slice axis and per plane side.
const MAX_RESOLUTION: usize = 4001;
const MAX_PLANE_RESOLUTION: usize = 1001;
const MAX_PREDICTION_RESOLUTION: usize = 512;

pub fn router() -> Router<AppState> {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session).delete(delete_session))
        .route("/session/{id}/arch", put(put_arch))
        .route("/session/{id}/data", put(put_data).get(get_data))
        .route(
            "/session/{id}/targetpoints",
            post(create_target).get(list_targets),
        )
        .route("/session/{id}/targetpoints/{tid}", get(get_target))
        .route("/session/{id}/focuspoints", post(create_focus))
        .route("/session/{id}/focuspoints/{fid}", get(get_focus))
        .route("/session/{id}/train", post(start_training))
        .route("/session/{id}/runs", get(list_runs))
        .route("/session/{id}/runs/{rid}", get(get_run))
        .route("/session/{id}/views/slices", post(view_slices))
        .route(
            "/session/{id}/views/interpolation",
            post(view_interpolation),
        )
        .route("/session/{id}/views/plane", post(view_plane))
        .route("/session/{id}/views/eigen", post(view_eigen))
        .route("/session/{id}/views/evslices", post(view_ev_slices))
        .route("/session/{id}/prediction/{tid}", get(prediction))
        .route("/session/{id}/export", post(export_points))
        .route("/session/{id}/import", post(import_points))
        .route("/jobs/{id}", get(job_status).delete(cancel_job))
        .route("/jobs/{id}/result", get(job_result))
}

fn json_bytes(status: StatusCode, body: impl Into<Bytes>) -> Response {
    let mut res = Response::new(Body::from(body.into()));
    *res.status_mut() = status;
    res.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    res
}

fn json_value(status: StatusCode, value: &impl Serialize) -> ApiResult<Response> {
    Ok(json_bytes(status, views::to_bytes(value)?))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

// ---- sessions ----

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    seed: Option<u64>,
}

async fn create_session(
    State(state): State<AppState>,
    JsonBody(body): JsonBody<CreateSession>,
) -> ApiResult<Response> {
    let id = state.next_session_id();
    let data = DataSpec::default_with_seed(body.seed.unwrap_or(state.config.seed));
    let session = blocking(move || Session::new(id, default_arch(), data)).await?;
    let summary = session.summary();
    state
        .sessions()
        .insert(session.id.clone(), Arc::new(std::sync::Mutex::new(session)));
    json_value(StatusCode::CREATED, &summary)
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let summary = lock(&session).summary();
    json_value(StatusCode::OK, &summary)
}

async fn delete_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    state
        .sessions()
        .shift_remove(&id)
        .ok_or_else(|| ApiError::not_found("session", &id))?;
    state.jobs.cancel_session(&id);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchBody {
    layers: Vec<usize>,
    #[serde(default)]
    activation: Option<Activation>,
    #[serde(default)]
    loss: Option<LossKind>,
}

async fn put_arch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<ArchBody>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let summary = {
        let mut s = lock(&session);
        let arch = NetworkArch::new(
            body.layers,
            body.activation.unwrap_or(s.arch.hidden_activation()),
            body.loss.unwrap_or(s.arch.loss_kind()),
        )?;
        s.set_arch(arch);
        s.summary()
    };
    state.jobs.cancel_session(&id);
    json_value(StatusCode::OK, &summary)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DataBody {
    expr: Option<String>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    range: Option<[f64; 2]>,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct DataPayload<'a> {
    data: &'a DataSpec,
    expr: String,
    target_grid: Grid,
}

fn data_payload(s: &Session) -> ApiResult<Response> {
    let grid = target_grid(
        &s.expr,
        (s.data.range[0], s.data.range[1]),
        DEFAULT_GRID_RESOLUTION,
    )?;
    json_value(
        StatusCode::OK,
        &DataPayload {
            data: &s.data,
            expr: s.expr.to_string(),
            target_grid: grid,
        },
    )
}

async fn put_data(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<DataBody>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let mut s = lock(&session);
    let current = s.data.clone();
    let spec = DataSpec {
        expr: body.expr.unwrap_or(current.expr),
        n_train: body.n_train.unwrap_or(current.n_train),
        n_test: body.n_test.unwrap_or(current.n_test),
        range: body.range.unwrap_or(current.range),
        seed: body.seed.unwrap_or(current.seed),
    };
    s.set_data(spec)?;
    data_payload(&s)
}

async fn get_data(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let s = lock(&session);
    data_payload(&s)
}

// ---- target points ----

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum PointKind {
    Random,
    Zero,
}

fn default_init_range() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateTarget {
    kind: PointKind,
    #[serde(default = "default_init_range")]
    range: f64,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    name: Option<String>,
}

async fn create_target(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<CreateTarget>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let mut s = lock(&session);
    let dim = s.arch.param_count();
    let point_id = s.next_point_id();
    let (weights, provenance) = match body.kind {
        PointKind::Zero => (WeightVector::zeros(dim), Provenance::ZeroVector),
        PointKind::Random => {
            // Unseeded requests derive a seed from the global seed and the
            // point counter, so a replayed session recreates the same points.
            let ordinal: u64 = point_id[2..].parse().unwrap_or(0);
            let seed = body.seed.unwrap_or(state.config.seed.wrapping_add(ordinal));
            let w = WeightVector::random_uniform(dim, body.range, seed)
                .map_err(|e| ApiError::from(e).in_field("range"))?;
            (
                w,
                Provenance::RandomInit {
                    seed,
                    range: body.range,
                },
            )
        }
    };
    let name = body.name.unwrap_or_else(|| point_id.clone());
    let point = TargetPoint::new(
        &point_id,
        name,
        &s.arch,
        weights,
        &s.train,
        &s.test,
        provenance,
        now_ms(),
    )?;
    s.targets.insert(point_id, Arc::new(point.clone()));
    s.touch();
    json_value(StatusCode::CREATED, &point)
}

async fn list_targets(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let points: Vec<Arc<TargetPoint>> = lock(&session).targets.values().cloned().collect();
    let points: Vec<&TargetPoint> = points.iter().map(|p| &**p).collect();
    json_value(StatusCode::OK, &json!({ "target_points": points }))
}

async fn get_target(
    State(state): State<AppState>,
    Path((id, tid)): Path<(String, String)>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let point = lock(&session).target(&tid)?;
    json_value(StatusCode::OK, &*point)
}

// ---- focus points ----

fn default_focus_count() -> usize {
    500
}
fn default_focus_range() -> f64 {
    5.0
}
fn default_levels() -> usize {
    3
}
fn default_dims() -> [usize; 2] {
    [0, 1]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateFocus {
    target_id: String,
    #[serde(default = "default_algorithm")]
    algorithm: SamplingAlgorithm,
    #[serde(default = "default_focus_count")]
    count: usize,
    #[serde(default = "default_focus_range")]
    range: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_levels")]
    mixed_levels: usize,
    #[serde(default = "default_dims")]
    dims: [usize; 2],
}

fn default_algorithm() -> SamplingAlgorithm {
    SamplingAlgorithm::Sobol
}

#[derive(Serialize)]
struct FocusPayload<'a> {
    #[serde(flatten)]
    set: &'a FocusSet,
    dims: [usize; 2],
    projection: Vec<[f64; 2]>,
}

fn focus_payload(status: StatusCode, set: &FocusSet, dims: [usize; 2]) -> ApiResult<Response> {
    let projection = projection_2d(set.points.iter().map(|p| &p.weights), dims[0], dims[1])?;
    json_value(
        status,
        &FocusPayload {
            set,
            dims,
            projection,
        },
    )
}

async fn create_focus(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<CreateFocus>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let (snap, target) = {
        let s = lock(&session);
        (
            s.snapshot(),
            s.target(&body.target_id)
                .map_err(|e| e.with_field("target_id"))?,
        )
    };
    let dim = snap.arch.param_count();
    for (field, d) in [("dims", body.dims[0]), ("dims", body.dims[1])] {
        if d >= dim {
            return Err(ApiError::invalid(
                field,
                format!("dimension {d} out of range 0..{dim}"),
            ));
        }
    }
    let config = SamplingConfig {
        algorithm: body.algorithm,
        count: body.count,
        range: body.range,
        seed: body.seed,
        mixed_levels: body.mixed_levels,
    };
    config.validate()?;
    let cfg = config.clone();
    let points = {
        let (arch, train, target) = (snap.arch.clone(), snap.train.clone(), target.clone());
        blocking(move || Ok(sample_focus_points(&arch, &train, &target, &cfg)?)).await?
    };
    let mut s = lock(&session);
    if s.version != snap.version || !s.targets.contains_key(&target.id) {
        return Err(ApiError::conflict(
            "session changed while sampling; retry the request",
        ));
    }
    let set = FocusSet {
        id: s.next_focus_id(),
        target_id: target.id.clone(),
        config,
        points,
    };
    let set = Arc::new(set);
    s.focus_sets.insert(set.id.clone(), set.clone());
    s.touch();
    drop(s);
    focus_payload(StatusCode::CREATED, &set, body.dims)
}

#[derive(Deserialize)]
struct DimsQuery {
    dim_a: Option<usize>,
    dim_b: Option<usize>,
}

async fn get_focus(
    State(state): State<AppState>,
    Path((id, fid)): Path<(String, String)>,
    Query(q): Query<DimsQuery>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let set = lock(&session).focus_set(&fid)?;
    focus_payload(
        StatusCode::OK,
        &set,
        [q.dim_a.unwrap_or(0), q.dim_b.unwrap_or(1)],
    )
}

// ---- training ----

fn default_batch() -> usize {
    32
}
fn default_checkpoints() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainBody {
    algorithm: Algorithm,
    learning_rate: f64,
    epochs: usize,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default)]
    loss_threshold: Option<f64>,
    #[serde(default)]
    timeout_ms: Option<u64>,
    #[serde(default = "default_checkpoints")]
    checkpoint_count: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartTraining {
    start_id: String,
    config: TrainBody,
}

#[derive(Serialize)]
struct RunStatus<'a> {
    id: &'a str,
    start_id: &'a str,
    job_id: &'a str,
    state: RunState,
    epochs: usize,
    epoch: usize,
    loss: Option<f64>,
    /// Checkpoint epochs already passed; weights are attached when the run ends.
    checkpoint_epochs_reached: Vec<usize>,
    loss_curve: Vec<f64>,
    outcome: Option<&'a RunOutcome>,
    error: Option<&'a str>,
}

fn run_status(run: &RunRecord) -> RunStatus<'_> {
    let snap = run.monitor.snapshot();
    let (epoch, loss_curve) = match &run.outcome {
        Some(o) => (o.epochs_run, o.loss_curve.clone()),
        None => (snap.epoch, snap.loss_curve),
    };
    let reached = match &run.outcome {
        Some(o) => o.checkpoint_epochs.clone(),
        None => checkpoint_epochs(run.epochs, run.checkpoint_count)
            .into_iter()
            .filter(|&e| e <= epoch)
            .collect(),
    };
    RunStatus {
        id: &run.id,
        start_id: &run.start_id,
        job_id: &run.job_id,
        state: run.state,
        epochs: run.epochs,
        epoch,
        loss: loss_curve.last().copied(),
        checkpoint_epochs_reached: reached,
        loss_curve,
        outcome: run.outcome.as_ref(),
        error: run.error.as_deref(),
    }
}

async fn start_training(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<StartTraining>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let c = body.config;
    let config = TrainConfig {
        algorithm: c.algorithm,
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
        epochs: c.epochs,
        loss_threshold: c.loss_threshold,
        timeout: c.timeout_ms.map(Duration::from_millis),
        checkpoint_count: c.checkpoint_count,
        seed: c.seed,
    };
    let mut s = lock(&session);
    let start = s
        .target(&body.start_id)
        .map_err(|e| e.with_field("start_id"))?;
    config
        .validate(s.train.len())
        .map_err(|e| ApiError::from(e).in_field("config"))?;
    let snap = s.snapshot();
    let run_id = s.next_run_id();
    let monitor = Arc::new(TrainMonitor::new());
    let control = Arc::new(Control::new());

    let work = {
        let (session, run_id, monitor) = (session.clone(), run_id.clone(), monitor.clone());
        let config = config.clone();
        move || -> ApiResult<Bytes> {
            let result =
                train_monitored(&snap.arch, &start.weights, &snap.train, &config, &monitor);
            finish_run(&session, &run_id, &snap, result)
        }
    };
    let progress = ProgressSource::Training {
        monitor: monitor.clone(),
        epochs: config.epochs,
    };
    let job_id = state.jobs.spawn("train", &id, control, progress, work);
    s.runs.insert(
        run_id.clone(),
        RunRecord {
            id: run_id.clone(),
            start_id: body.start_id,
            job_id: job_id.clone(),
            epochs: config.epochs,
            checkpoint_count: config.checkpoint_count,
            monitor,
            state: RunState::Running,
            outcome: None,
            error: None,
        },
    );
    json_value(
        StatusCode::ACCEPTED,
        &json!({ "run_id": run_id, "job_id": job_id }),
    )
}

/// Stores checkpoints as target points and returns the final run status.
fn finish_run(
    session: &SharedSession,
    run_id: &str,
    snap: &Snapshot,
    result: losslens::Result<losslens::optimizer::TrainRun>,
) -> ApiResult<Bytes> {
    let mut s = lock(session);
    let discarded = s.arch != snap.arch;
    let run = match result {
        Ok(run) => run,
        Err(e) => {
            let err = ApiError::from(e);
            if let Some(r) = s.runs.get_mut(run_id) {
                r.state = RunState::Failed;
                r.error = Some(err.message.clone());
            }
            return Err(err);
        }
    };
    let mut checkpoint_ids = Vec::new();
    if !discarded {
        let now = now_ms();
        for cp in &run.checkpoints {
            let pid = s.next_point_id();
            let point = TargetPoint::new(
                &pid,
                format!("{run_id} epoch {}", cp.epoch),
                &s.arch,
                cp.weights.clone(),
                &s.train,
                &s.test,
                Provenance::Training {
                    run_id: run_id.to_string(),
                    epoch: cp.epoch,
                },
                now,
            )?;
            s.targets.insert(pid.clone(), Arc::new(point));
            checkpoint_ids.push(pid);
        }
        s.touch();
    }
    let outcome = RunOutcome {
        termination: run.termination,
        epochs_run: run.epochs_run(),
        initial_loss: run.initial_loss,
        final_loss: run.final_loss(),
        checkpoint_epochs: run.checkpoints.iter().map(|c| c.epoch).collect(),
        checkpoint_ids,
        loss_curve: run.loss_curve,
    };
    let record = s
        .runs
        .get_mut(run_id)
        .ok_or_else(|| ApiError::internal(format!("run `{run_id}` vanished")))?;
    record.state = if discarded {
        RunState::Discarded
    } else {
        RunState::Finished
    };
    record.outcome = Some(outcome);
    views::to_bytes(&run_status(record))
}

async fn list_runs(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let s = lock(&session);
    let runs: Vec<RunStatus> = s.runs.values().map(run_status).collect();
    json_value(StatusCode::OK, &json!({ "runs": runs }))
}

async fn get_run(
    State(state): State<AppState>,
    Path((id, rid)): Path<(String, String)>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let s = lock(&session);
    let run = s
        .runs
        .get(&rid)
        .ok_or_else(|| ApiError::not_found("run", &rid))?;
    json_value(StatusCode::OK, &run_status(run))
}

// ---- views ----

/// Serves a view from the cache, computes it inline, or hands it to a job.
#[allow(clippy::too_many_arguments)]
async fn dispatch_view<F>(
    state: &AppState,
    session_id: &str,
    session: &SharedSession,
    endpoint: &'static str,
    canonical: &impl Serialize,
    version: u64,
    work: f64,
    background: Option<bool>,
    compute: F,
) -> ApiResult<Response>
where
    F: FnOnce(&Control) -> ApiResult<Bytes> + Send + 'static,
{
    let canonical = serde_json::to_vec(canonical).map_err(|e| ApiError::internal(e.to_string()))?;
    let key = cache_key(endpoint, &canonical, version);
    if let Some(bytes) = lock(session).cache.get(&key) {
        return Ok(with_cache_header(json_bytes(StatusCode::OK, bytes), "hit"));
    }
    let control = Arc::new(Control::new());
    if background.unwrap_or(work > BACKGROUND_WORK) {
        let (session, ctl) = (session.clone(), control.clone());
        let job_id = state.jobs.spawn(
            endpoint,
            session_id,
            control.clone(),
            ProgressSource::Control(control),
            move || {
                let bytes = compute(&ctl)?;
                remember(&session, key, version, &bytes);
                Ok(bytes)
            },
        );
        return json_value(
            StatusCode::ACCEPTED,
            &json!({ "job_id": job_id, "status_url": format!("/jobs/{job_id}") }),
        );
    }
    let bytes = blocking(move || compute(&control)).await?;
    remember(session, key, version, &bytes);
    Ok(with_cache_header(json_bytes(StatusCode::OK, bytes), "miss"))
}

/// Caches a payload unless the session moved on while it was computed.
fn remember(session: &SharedSession, key: CacheKey, version: u64, bytes: &Bytes) {
    let mut s = lock(session);
    if s.version == version {
        s.cache.insert(key, bytes.clone());
    }
}

fn with_cache_header(mut res: Response, value: &'static str) -> Response {
    res.headers_mut()
        .insert("x-view-cache", HeaderValue::from_static(value));
    res
}

fn check_resolution(resolution: usize, max: usize) -> ApiResult<()> {
    if resolution > max {
        return Err(ApiError::invalid(
            "resolution",
            format!("resolution must not exceed {max}"),
        ));
    }
    Ok(())
}

async fn view_slices(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<views::SlicesRequest>,
) -> ApiResult<Response> {
    check_resolution(req.resolution, MAX_RESOLUTION)?;
    symmetric_offsets(req.range, req.resolution)?;
    let session = state.session(&id)?;
    let (snap, target, focus) = {
        let s = lock(&session);
        let target = s
            .target(&req.target_id)
            .map_err(|e| e.with_field("target_id"))?;
        let focus = match &req.focus_set_id {
            Some(fid) => Some(s.focus_set(fid).map_err(|e| e.with_field("focus_set_id"))?),
            None => None,
        };
        (s.snapshot(), target, focus)
    };
    let work = views::slices_work(&snap, focus.as_deref(), req.resolution);
    let (version, background) = (snap.version, req.background);
    let r = req.clone();
    dispatch_view(
        &state,
        &id,
        &session,
        "slices",
        &req,
        version,
        work,
        background,
        move |c| views::compute_slices(&snap, &r, &target, focus.as_deref(), c),
    )
    .await
}

async fn view_interpolation(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<views::InterpolationRequest>,
) -> ApiResult<Response> {
    let alphas = views::resolve_alphas(&req)?;
    let session = state.session(&id)?;
    let (snap, t0, t1) = {
        let s = lock(&session);
        (
            s.snapshot(),
            s.target(&req.theta0_id)
                .map_err(|e| e.with_field("theta0_id"))?,
            s.target(&req.theta1_id)
                .map_err(|e| e.with_field("theta1_id"))?,
        )
    };
    let work = views::interpolation_work(&snap, alphas.len());
    let version = snap.version;
    dispatch_view(
        &state,
        &id,
        &session,
        "interpolation",
        &req,
        version,
        work,
        req.background,
        move |c| views::compute_interpolation(&snap, &t0, &t1, &alphas, c),
    )
    .await
}

async fn view_plane(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(mut req): JsonBody<views::PlaneRequest>,
) -> ApiResult<Response> {
    check_resolution(req.resolution, MAX_PLANE_RESOLUTION)?;
    symmetric_offsets(req.extent, req.resolution).map_err(|e| match ApiError::from(e) {
        err if err.field.as_deref() == Some("range") => err.with_field("extent"),
        err => err,
    })?;
    // Directions are drawn here so the payload reports the seed it used.
    if req.seed.is_none() {
        req.seed = Some(rand::random());
    }
    let session = state.session(&id)?;
    let (snap, target) = {
        let s = lock(&session);
        (
            s.snapshot(),
            s.target(&req.target_id)
                .map_err(|e| e.with_field("target_id"))?,
        )
    };
    let work = views::plane_work(&snap, req.resolution);
    let version = snap.version;
    let r = req.clone();
    dispatch_view(
        &state,
        &id,
        &session,
        "plane",
        &req,
        version,
        work,
        req.background,
        move |c| views::compute_plane(&snap, &r, &target, c),
    )
    .await
}

fn check_eigen_k(k: usize, snap: &Snapshot) -> ApiResult<()> {
    let dim = snap.arch.param_count();
    if k == 0 || k > dim {
        return Err(ApiError::invalid(
            "k",
            format!("k must be between 1 and the parameter count ({dim})"),
        ));
    }
    Ok(())
}

async fn view_eigen(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<views::EigenRequest>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let (snap, target) = {
        let s = lock(&session);
        (
            s.snapshot(),
            s.target(&req.target_id)
                .map_err(|e| e.with_field("target_id"))?,
        )
    };
    check_eigen_k(req.k, &snap)?;
    let work = views::eigen_work(&snap, req.k);
    let version = snap.version;
    let r = req.clone();
    dispatch_view(
        &state,
        &id,
        &session,
        "eigen",
        &req,
        version,
        work,
        req.background,
        move |c| views::compute_eigen(&snap, &r, &target, c),
    )
    .await
}

async fn view_ev_slices(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<views::EvSlicesRequest>,
) -> ApiResult<Response> {
    check_resolution(req.resolution, MAX_RESOLUTION)?;
    symmetric_offsets(req.range, req.resolution)?;
    let session = state.session(&id)?;
    let (snap, target) = {
        let s = lock(&session);
        (
            s.snapshot(),
            s.target(&req.target_id)
                .map_err(|e| e.with_field("target_id"))?,
        )
    };
    check_eigen_k(req.k, &snap)?;
    let work = views::eigen_work(&snap, req.k) + (req.k * req.resolution * snap.train.len()) as f64;
    let version = snap.version;
    let r = req.clone();
    dispatch_view(
        &state,
        &id,
        &session,
        "evslices",
        &req,
        version,
        work,
        req.background,
        move |c| views::compute_ev_slices(&snap, &r, &target, c),
    )
    .await
}

#[derive(Deserialize)]
struct PredictionQuery {
    resolution: Option<usize>,
}

async fn prediction(
    State(state): State<AppState>,
    Path((id, tid)): Path<(String, String)>,
    Query(q): Query<PredictionQuery>,
) -> ApiResult<Response> {
    let resolution = q.resolution.unwrap_or(DEFAULT_GRID_RESOLUTION);
    check_resolution(resolution, MAX_PREDICTION_RESOLUTION)?;
    let session = state.session(&id)?;
    let (arch, point, range) = {
        let s = lock(&session);
        (
            s.arch.clone(),
            s.target(&tid)?,
            (s.data.range[0], s.data.range[1]),
        )
    };
    let grid = prediction_grid(&arch, &point.weights, range, resolution)?;
    json_value(StatusCode::OK, &json!({ "target_id": tid, "grid": grid }))
}

// ---- store ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportBody {
    file: String,
    #[serde(default)]
    target_ids: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportBody {
    file: String,
}

/// Resolves a bare file name inside the data directory.
fn store_path(state: &AppState, file: &str) -> ApiResult<PathBuf> {
    let ok = !file.is_empty()
        && file.len() <= 200
        && !file.starts_with('.')
        && file
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if !ok {
        return Err(ApiError::invalid(
            "file",
            "file must be a plain name of letters, digits, '.', '_' or '-'",
        ));
    }
    let name = if file.ends_with(FILE_SUFFIX) {
        file.to_string()
    } else {
        format!("{file}{FILE_SUFFIX}")
    };
    Ok(state.config.data_dir.join(name))
}

async fn export_points(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<ExportBody>,
) -> ApiResult<Response> {
    let path = store_path(&state, &body.file)?;
    let session = state.session(&id)?;
    let (arch, points) = {
        let s = lock(&session);
        let points: Vec<TargetPoint> = match &body.target_ids {
            Some(ids) => ids
                .iter()
                .map(|t| {
                    s.target(t)
                        .map(|p| (*p).clone())
                        .map_err(|e| e.with_field("target_ids"))
                })
                .collect::<ApiResult<_>>()?,
            None => s.targets.values().map(|p| (**p).clone()).collect(),
        };
        (s.arch.clone(), points)
    };
    let count = points.len();
    let written = path.clone();
    blocking(move || {
        if let Some(dir) = written.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::from(losslens::Error::from(e)))?;
        }
        Ok(store::save(&points, &arch, &written)?)
    })
    .await?;
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    json_value(StatusCode::OK, &json!({ "file": file, "count": count }))
}

async fn import_points(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<ImportBody>,
) -> ApiResult<Response> {
    let path = store_path(&state, &body.file)?;
    let session = state.session(&id)?;
    let arch = lock(&session).arch.clone();
    let loaded = {
        let arch = arch.clone();
        blocking(move || Ok(store::load(&path, &arch)?)).await?
    };
    let mut s = lock(&session);
    if s.arch != arch {
        return Err(ApiError::conflict(
            "architecture changed during import; retry the request",
        ));
    }
    let mut imported = Vec::with_capacity(loaded.len());
    for p in loaded {
        p.check_arch(&s.arch)?;
        let pid = s.next_point_id();
        let point = TargetPoint::new(
            &pid,
            p.name,
            &s.arch,
            p.weights,
            &s.train,
            &s.test,
            p.provenance,
            p.created_at,
        )?;
        s.targets.insert(pid, Arc::new(point.clone()));
        imported.push(point);
    }
    s.touch();
    json_value(StatusCode::OK, &json!({ "imported": imported }))
}

// ---- jobs ----

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_bytes(StatusCode::OK, state.jobs.status_json(&id)?))
}

async fn job_result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_bytes(StatusCode::OK, state.jobs.result(&id)?))
}

async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let status = state.jobs.cancel(&id)?;
    json_value(StatusCode::OK, &json!({ "id": id, "status": status }))
}
