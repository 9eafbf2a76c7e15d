//! Landscape view requests and their payloads.
//!
//! Requests are normalized (defaults filled, random seeds drawn) before
//! hashing, so an identical normalized request always maps to the same
//! cache entry and the same bytes.

use axum::body::Bytes;
use losslens::control::Control;
use losslens::hessian::{network_eigenpairs, EigenConfig, EigenResult};
use losslens::landscape::{
    alpha_grid, axis_slices_with, ev_slices, interpolate_with, plane_slice_with, InterpolationPath,
    PlaneConfig, PlaneSlice, Slice1D, SliceChart, SlicePoint, DEFAULT_ALPHA_RANGE,
    DEFAULT_INTERPOLATION_NODES, DEFAULT_PLANE_RESOLUTION, DEFAULT_SLICE_RESOLUTION,
};
use losslens::store::TargetPoint;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::session::{FocusSet, Snapshot};

/// Views estimated above this many sample evaluations run as jobs unless
/// the request says otherwise.
pub const BACKGROUND_WORK: f64 = (1u64 << 26) as f64;

/// Approximate per-pair Hessian cost in loss evaluations.
const EIGEN_WORK_PER_PAIR: f64 = 3000.0;

fn default_slice_range() -> f64 {
    25.0
}
fn default_slice_resolution() -> usize {
    DEFAULT_SLICE_RESOLUTION
}
fn default_alpha_range() -> [f64; 2] {
    [DEFAULT_ALPHA_RANGE.0, DEFAULT_ALPHA_RANGE.1]
}
fn default_nodes() -> usize {
    DEFAULT_INTERPOLATION_NODES
}
fn default_extent() -> f64 {
    1.0
}
fn default_plane_resolution() -> usize {
    DEFAULT_PLANE_RESOLUTION
}
fn default_k() -> usize {
    EigenConfig::default().k
}
fn default_tol() -> f64 {
    EigenConfig::default().tol
}
fn default_residual_tol() -> f64 {
    EigenConfig::default().residual_tol
}
fn default_max_iter() -> usize {
    EigenConfig::default().max_iter
}
fn default_ev_range() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicesRequest {
    pub target_id: String,
    #[serde(default)]
    pub focus_set_id: Option<String>,
    #[serde(default = "default_slice_range")]
    pub range: f64,
    #[serde(default = "default_slice_resolution")]
    pub resolution: usize,
    #[serde(default, skip_serializing)]
    pub background: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationRequest {
    pub theta0_id: String,
    pub theta1_id: String,
    /// Explicit nodes; overrides `alpha_range` and `nodes`.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default = "default_alpha_range")]
    pub alpha_range: [f64; 2],
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default, skip_serializing)]
    pub background: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneRequest {
    pub target_id: String,
    #[serde(default = "default_extent")]
    pub extent: f64,
    #[serde(default = "default_plane_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub orthogonalize: bool,
    #[serde(default, skip_serializing)]
    pub background: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenRequest {
    pub target_id: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub background: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvSlicesRequest {
    pub target_id: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_ev_range")]
    pub range: f64,
    #[serde(default = "default_slice_resolution")]
    pub resolution: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub background: Option<bool>,
}

impl EigenRequest {
    pub fn config(&self) -> EigenConfig {
        EigenConfig {
            k: self.k,
            tol: self.tol,
            residual_tol: self.residual_tol,
            max_iter: self.max_iter,
            seed: self.seed,
        }
    }
}

impl EvSlicesRequest {
    pub fn config(&self) -> EigenConfig {
        EigenConfig {
            k: self.k,
            tol: self.tol,
            residual_tol: self.residual_tol,
            max_iter: self.max_iter,
            seed: self.seed,
        }
    }
}

pub fn to_bytes(payload: &impl Serialize) -> ApiResult<Bytes> {
    serde_json::to_vec(payload)
        .map(Bytes::from)
        .map_err(|e| ApiError::internal(e.to_string()))
}

#[derive(Serialize)]
struct SlicesPayload<'a> {
    view: &'static str,
    target_id: &'a str,
    focus_set_id: Option<&'a str>,
    slice_range: f64,
    resolution: usize,
    param_count: usize,
    charts: Vec<SliceChart>,
}

pub fn slices_work(snap: &Snapshot, focus: Option<&FocusSet>, resolution: usize) -> f64 {
    let points = 1 + focus.map_or(0, |f| f.points.len());
    (snap.arch.param_count() * points * resolution * snap.train.len()) as f64
}

pub fn compute_slices(
    snap: &Snapshot,
    req: &SlicesRequest,
    target: &TargetPoint,
    focus: Option<&FocusSet>,
    control: &Control,
) -> ApiResult<Bytes> {
    let ids: Vec<String> = focus
        .map(|f| {
            f.points
                .iter()
                .map(|p| format!("{}/{}", f.id, p.id))
                .collect()
        })
        .unwrap_or_default();
    let mut points = vec![SlicePoint {
        id: &target.id,
        weights: &target.weights,
        is_target: true,
    }];
    if let Some(f) = focus {
        points.extend(f.points.iter().zip(&ids).map(|(p, id)| SlicePoint {
            id,
            weights: &p.weights,
            is_target: false,
        }));
    }
    let charts = axis_slices_with(
        &snap.arch,
        &snap.train,
        &points,
        req.range,
        req.resolution,
        control,
    )?;
    to_bytes(&SlicesPayload {
        view: "slices",
        target_id: &target.id,
        focus_set_id: focus.map(|f| f.id.as_str()),
        slice_range: req.range,
        resolution: req.resolution,
        param_count: snap.arch.param_count(),
        charts,
    })
}

#[derive(Serialize)]
struct InterpolationPayload {
    view: &'static str,
    #[serde(flatten)]
    path: InterpolationPath,
}

pub fn resolve_alphas(req: &InterpolationRequest) -> ApiResult<Vec<f64>> {
    match &req.alphas {
        Some(a) => Ok(a.clone()),
        None => alpha_grid(req.alpha_range[0], req.alpha_range[1], req.nodes)
            .map_err(|e| ApiError::from(e).with_field("alpha_range")),
    }
}

pub fn interpolation_work(snap: &Snapshot, nodes: usize) -> f64 {
    (nodes * (snap.train.len() + snap.test.len())) as f64
}

pub fn compute_interpolation(
    snap: &Snapshot,
    theta0: &TargetPoint,
    theta1: &TargetPoint,
    alphas: &[f64],
    control: &Control,
) -> ApiResult<Bytes> {
    let path = interpolate_with(
        &snap.arch,
        (&theta0.id, &theta0.weights),
        (&theta1.id, &theta1.weights),
        &snap.train,
        &snap.test,
        alphas,
        control,
    )?;
    to_bytes(&InterpolationPayload {
        view: "interpolation",
        path,
    })
}

#[derive(Serialize)]
struct PlanePayload {
    view: &'static str,
    #[serde(flatten)]
    plane: PlaneSlice,
}

pub fn plane_work(snap: &Snapshot, resolution: usize) -> f64 {
    (resolution * resolution * snap.train.len()) as f64
}

pub fn compute_plane(
    snap: &Snapshot,
    req: &PlaneRequest,
    origin: &TargetPoint,
    control: &Control,
) -> ApiResult<Bytes> {
    let config = PlaneConfig {
        resolution: req.resolution,
        extent: req.extent,
        seed: req.seed,
        orthogonalize: req.orthogonalize,
    };
    let plane = plane_slice_with(
        &snap.arch,
        &snap.train,
        (&origin.id, &origin.weights),
        &config,
        control,
    )?;
    to_bytes(&PlanePayload {
        view: "plane",
        plane,
    })
}

#[derive(Serialize)]
struct EigenPayload<'a> {
    view: &'static str,
    target_id: &'a str,
    #[serde(flatten)]
    result: EigenResult,
}

pub fn eigen_work(snap: &Snapshot, k: usize) -> f64 {
    (k + 1) as f64 * EIGEN_WORK_PER_PAIR * snap.train.len() as f64
}

fn eigenpairs(
    snap: &Snapshot,
    target: &TargetPoint,
    cfg: &EigenConfig,
    control: &Control,
) -> ApiResult<EigenResult> {
    Ok(network_eigenpairs(
        &snap.arch,
        &target.weights,
        &snap.train,
        cfg,
        control,
    )?)
}

pub fn compute_eigen(
    snap: &Snapshot,
    req: &EigenRequest,
    target: &TargetPoint,
    control: &Control,
) -> ApiResult<Bytes> {
    let result = eigenpairs(snap, target, &req.config(), control)?;
    to_bytes(&EigenPayload {
        view: "eigen",
        target_id: &target.id,
        result,
    })
}

#[derive(Serialize)]
struct EvSlicesPayload<'a> {
    view: &'static str,
    target_id: &'a str,
    range: f64,
    resolution: usize,
    eigenvalues: Vec<f64>,
    converged: Vec<bool>,
    lambda_min: f64,
    convexity_ratio: f64,
    origin_loss: f64,
    slices: Vec<Slice1D>,
    warnings: Vec<String>,
}

pub fn compute_ev_slices(
    snap: &Snapshot,
    req: &EvSlicesRequest,
    target: &TargetPoint,
    control: &Control,
) -> ApiResult<Bytes> {
    let eig = eigenpairs(snap, target, &req.config(), control)?;
    control.checkpoint()?;
    let out = ev_slices(
        &snap.arch,
        &snap.train,
        (&target.id, &target.weights),
        &eig.eigenvectors,
        req.range,
        req.resolution,
    )?;
    to_bytes(&EvSlicesPayload {
        view: "evslices",
        target_id: &target.id,
        range: req.range,
        resolution: req.resolution,
        eigenvalues: eig.eigenvalues,
        converged: eig.converged,
        lambda_min: eig.lambda_min,
        convexity_ratio: eig.convexity_ratio,
        origin_loss: out.origin_loss,
        slices: out.slices,
        warnings: out.warnings,
    })
}
