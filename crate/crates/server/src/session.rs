use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use losslens::dataset::{generate, DataConfig};
use losslens::expr::{parse, Expr};
use losslens::optimizer::{Termination, TrainMonitor};
use losslens::sampling::{FocusPoint, SamplingConfig};
use losslens::store::TargetPoint;
use losslens::{Activation, Dataset, LossKind, NetworkArch};
use serde::{Deserialize, Serialize};

use crate::cache::ViewCache;
use crate::error::{ApiError, ApiResult};

pub const VIEW_CACHE_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub expr: String,
    pub n_train: usize,
    pub n_test: usize,
    pub range: [f64; 2],
    pub seed: u64,
}

impl DataSpec {
    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            expr: "sin(x)+sin(y)".into(),
            n_train: 256,
            n_test: 256,
            range: [0.0, 5.0],
            seed,
        }
    }

    pub fn generate(&self) -> ApiResult<(Expr, Dataset, Dataset)> {
        let expr = parse(&self.expr)
            .map_err(|e| ApiError::from(losslens::Error::from(e)).with_field("expr"))?;
        let config = DataConfig {
            expr: expr.clone(),
            n_train: self.n_train,
            n_test: self.n_test,
            range_lo: self.range[0],
            range_hi: self.range[1],
            seed: self.seed,
        };
        let (train, test) = generate(&config).map_err(|e| ApiError::from(e).in_field("expr"))?;
        Ok((expr, train, test))
    }
}

pub fn default_arch() -> NetworkArch {
    NetworkArch::new(vec![2, 4, 3, 1], Activation::Sigmoid, LossKind::Mse)
        .expect("default architecture is valid")
}

#[derive(Debug, Clone, Serialize)]
pub struct FocusSet {
    pub id: String,
    pub target_id: String,
    pub config: SamplingConfig,
    pub points: Vec<FocusPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub termination: Termination,
    pub epochs_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint_epochs: Vec<usize>,
    pub checkpoint_ids: Vec<String>,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Running,
    Finished,
    Failed,
    /// The session changed architecture while the run was in flight.
    Discarded,
}

pub struct RunRecord {
    pub id: String,
    pub start_id: String,
    pub job_id: String,
    pub epochs: usize,
    pub checkpoint_count: usize,
    pub monitor: Arc<TrainMonitor>,
    pub state: RunState,
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
}

pub struct Session {
    pub id: String,
    pub arch: NetworkArch,
    pub data: DataSpec,
    pub expr: Expr,
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub targets: IndexMap<String, Arc<TargetPoint>>,
    pub focus_sets: IndexMap<String, Arc<FocusSet>>,
    pub runs: IndexMap<String, RunRecord>,
    /// Bumped by every mutation; part of every view cache key.
    pub version: u64,
    pub cache: ViewCache,
    next_point: u64,
    next_focus: u64,
    next_run: u64,
}

/// Read-only inputs for a computation, detached from the session lock.
#[derive(Clone)]
pub struct Snapshot {
    pub arch: NetworkArch,
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub version: u64,
}

impl Session {
    pub fn new(id: String, arch: NetworkArch, data: DataSpec) -> ApiResult<Self> {
        let (expr, train, test) = data.generate()?;
        Ok(Self {
            id,
            arch,
            data,
            expr,
            train: Arc::new(train),
            test: Arc::new(test),
            targets: IndexMap::new(),
            focus_sets: IndexMap::new(),
            runs: IndexMap::new(),
            version: 1,
            cache: ViewCache::new(VIEW_CACHE_CAPACITY),
            next_point: 1,
            next_focus: 1,
            next_run: 1,
        })
    }

    /// Records a mutation: new version, empty cache.
    pub fn touch(&mut self) {
        self.version += 1;
        self.cache.clear();
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            arch: self.arch.clone(),
            train: Arc::clone(&self.train),
            test: Arc::clone(&self.test),
            version: self.version,
        }
    }

    pub fn next_point_id(&mut self) -> String {
        let id = format!("tp{}", self.next_point);
        self.next_point += 1;
        id
    }

    pub fn next_focus_id(&mut self) -> String {
        let id = format!("fs{}", self.next_focus);
        self.next_focus += 1;
        id
    }

    pub fn next_run_id(&mut self) -> String {
        let id = format!("run{}", self.next_run);
        self.next_run += 1;
        id
    }

    pub fn target(&self, id: &str) -> ApiResult<Arc<TargetPoint>> {
        self.targets
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("target point", id))
    }

    pub fn focus_set(&self, id: &str) -> ApiResult<Arc<FocusSet>> {
        self.focus_sets
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("focus point set", id))
    }

    /// Replaces the architecture; points, focus sets and runs made for the
    /// old one are dropped.
    pub fn set_arch(&mut self, arch: NetworkArch) {
        self.arch = arch;
        self.targets.clear();
        self.focus_sets.clear();
        for run in self.runs.values_mut() {
            if run.state == RunState::Running {
                run.state = RunState::Discarded;
            }
        }
        self.touch();
    }

    /// Regenerates the datasets and re-evaluates every stored loss.
    pub fn set_data(&mut self, data: DataSpec) -> ApiResult<()> {
        let (expr, train, test) = data.generate()?;
        for point in self.targets.values_mut() {
            let mut p = (**point).clone();
            p.train_loss = self.arch.loss(&p.weights, &train)?;
            p.test_loss = self.arch.loss(&p.weights, &test)?;
            *point = Arc::new(p);
        }
        for set in self.focus_sets.values_mut() {
            let mut s = (**set).clone();
            for f in &mut s.points {
                f.loss = self.arch.loss(&f.weights, &train)?;
            }
            *set = Arc::new(s);
        }
        self.data = data;
        self.expr = expr;
        self.train = Arc::new(train);
        self.test = Arc::new(test);
        self.touch();
        Ok(())
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            version: self.version,
            arch: self.arch.clone(),
            param_count: self.arch.param_count(),
            bias_count: self.arch.bias_count(),
            weight_count: self.arch.weight_count(),
            labels: self.arch.labels().iter().map(|l| l.to_string()).collect(),
            fingerprint: self.arch.fingerprint(),
            data: self.data.clone(),
            target_points: self.targets.keys().cloned().collect(),
            focus_sets: self.focus_sets.keys().cloned().collect(),
            runs: self.runs.keys().cloned().collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub version: u64,
    pub arch: NetworkArch,
    pub param_count: usize,
    pub bias_count: usize,
    pub weight_count: usize,
    pub labels: Vec<String>,
    pub fingerprint: String,
    pub data: DataSpec,
    pub target_points: Vec<String>,
    pub focus_sets: Vec<String>,
    pub runs: Vec<String>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
