//! First-order training with evenly spaced checkpoints.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::network::{Dataset, NetworkArch, WeightVector};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Above this many stored values (`params × epochs`) the trajectory is not
/// kept in memory; early-stopped runs are replayed to collect checkpoints.
const HISTORY_BUDGET: usize = 4 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Full-batch gradient descent.
    Gd,
    /// Mini-batch stochastic gradient descent.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Mini-batch size; only used by SGD.
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_threshold: Option<f64>,
    pub timeout: Option<Duration>,
    pub checkpoint_count: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, learning_rate: f64, epochs: usize) -> Self {
        Self {
            algorithm,
            learning_rate,
            batch_size: 32,
            epochs,
            loss_threshold: None,
            timeout: None,
            checkpoint_count: 10,
            seed: 0,
        }
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be a positive number"));
        }
        if self.algorithm == Algorithm::Sgd && !(1..=n_samples).contains(&self.batch_size) {
            return Err(Error::invalid(
                "batch_size",
                format!("must be between 1 and the number of samples ({n_samples})"),
            ));
        }
        if self.checkpoint_count < 2 {
            return Err(Error::invalid(
                "checkpoint_count",
                "at least 2 checkpoints are required",
            ));
        }
        if matches!(self.loss_threshold, Some(t) if !t.is_finite()) {
            return Err(Error::invalid("loss_threshold", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Completed,
    Threshold,
    Timeout,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub weights: WeightVector,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRun {
    /// Full training loss after each executed epoch.
    pub loss_curve: Vec<f64>,
    pub initial_loss: f64,
    /// Nondecreasing epochs; the first is the start, the last the final state.
    pub checkpoints: Vec<Checkpoint>,
    pub termination: Termination,
}

impl TrainRun {
    pub fn epochs_run(&self) -> usize {
        self.loss_curve.len()
    }

    pub fn final_weights(&self) -> &WeightVector {
        &self.checkpoints.last().unwrap().weights
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Epochs `round(i·E/(k−1))` for `i = 0..k`, with duplicates removed.
pub fn checkpoint_epochs(executed: usize, k: usize) -> Vec<usize> {
    assert!(k >= 2, "checkpoint_count must be at least 2");
    let denom = k - 1;
    let mut epochs: Vec<usize> = (0..k)
        .map(|i| (2 * i * executed + denom) / (2 * denom))
        .collect();
    epochs.dedup();
    epochs
}

/// Live view of a running training job. The trainer only ever `try_lock`s
/// the curve, so readers cannot stall it.
#[derive(Debug, Default)]
pub struct TrainMonitor {
    epoch: AtomicUsize,
    last_loss: AtomicU64,
    cancelled: AtomicBool,
    curve: Mutex<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressSnapshot {
    pub epoch: usize,
    pub loss: f64,
    pub loss_curve: Vec<f64>,
}

impl TrainMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> ProgressSnapshot {
        let loss_curve = self.curve.lock().unwrap_or_else(|e| e.into_inner()).clone();
        ProgressSnapshot {
            epoch: self.epoch.load(Ordering::Acquire),
            loss: f64::from_bits(self.last_loss.load(Ordering::Relaxed)),
            loss_curve,
        }
    }

    fn publish(&self, epoch: usize, loss: f64, pending: &mut Vec<f64>, force: bool) {
        self.last_loss.store(loss.to_bits(), Ordering::Relaxed);
        self.epoch.store(epoch, Ordering::Release);
        let guard = if force {
            Some(self.curve.lock().unwrap_or_else(|e| e.into_inner()))
        } else {
            self.curve.try_lock().ok()
        };
        if let Some(mut curve) = guard {
            curve.append(pending);
        }
    }
}

pub trait Step {
    fn step(&mut self, params: &mut [f64], grad: &[f64]);
}

#[derive(Debug, Clone)]
pub struct GradientDescent {
    pub learning_rate: f64,
}

impl Step for GradientDescent {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= self.learning_rate * g;
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

impl Step for Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

enum Stopping<'a> {
    /// Apply threshold, timeout and cancellation.
    Live {
        config: &'a TrainConfig,
        monitor: &'a TrainMonitor,
        started: Instant,
    },
    /// Deterministic replay up to a fixed epoch count.
    Replay,
}

/// Runs up to `max_epochs` epochs, calling `capture(epoch, params, loss)` for
/// epoch 0 and after every executed epoch.
fn run_epochs(
    arch: &NetworkArch,
    start: &[f64],
    data: &Dataset,
    config: &TrainConfig,
    max_epochs: usize,
    stopping: Stopping<'_>,
    capture: &mut dyn FnMut(usize, &[f64], f64),
) -> Result<(Vec<f64>, Termination)> {
    let mut params = start.to_vec();
    let mut curve = Vec::with_capacity(max_epochs.min(1 << 20));
    let mut pending = Vec::new();
    let mut gd = GradientDescent {
        learning_rate: config.learning_rate,
    };
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut batch_rng = stream_rng(config.seed, Stream::Minibatch);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let (mut loss, mut grad) = arch.loss_and_gradient_unchecked(&params, data, None);
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    capture(0, &params, loss);

    let mut termination = Termination::Completed;
    for epoch in 1..=max_epochs {
        if let Stopping::Live {
            config,
            monitor,
            started,
        } = &stopping
        {
            if monitor.cancelled.load(Ordering::Relaxed) {
                termination = Termination::Cancelled;
                break;
            }
            if config.timeout.is_some_and(|t| started.elapsed() >= t) {
                termination = Termination::Timeout;
                break;
            }
        }

        match config.algorithm {
            Algorithm::Gd => {
                gd.step(&mut params, &grad);
                (loss, grad) = arch.loss_and_gradient_unchecked(&params, data, None);
            }
            Algorithm::Adam => {
                adam.step(&mut params, &grad);
                (loss, grad) = arch.loss_and_gradient_unchecked(&params, data, None);
            }
            Algorithm::Sgd => {
                order.shuffle(&mut batch_rng);
                for chunk in order.chunks(config.batch_size) {
                    let mut batch = chunk.to_vec();
                    batch.sort_unstable();
                    let (_, g) = arch.loss_and_gradient_unchecked(&params, data, Some(&batch));
                    gd.step(&mut params, &g);
                }
                loss = arch.loss_unchecked(&params, data);
            }
        }
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        curve.push(loss);
        capture(epoch, &params, loss);

        if let Stopping::Live {
            config, monitor, ..
        } = &stopping
        {
            pending.push(loss);
            monitor.publish(epoch, loss, &mut pending, false);
            if config.loss_threshold.is_some_and(|t| loss <= t) {
                termination = Termination::Threshold;
                break;
            }
        }
    }
    if let Stopping::Live { monitor, .. } = &stopping {
        monitor.publish(curve.len(), loss, &mut pending, true);
    }
    Ok((curve, termination))
}

pub fn train(
    arch: &NetworkArch,
    start: &WeightVector,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainRun> {
    train_monitored(arch, start, data, config, &TrainMonitor::new())
}

/// Trains from `start`, capturing `checkpoint_count` evenly spaced
/// checkpoints over the epochs actually executed.
pub fn train_monitored(
    arch: &NetworkArch,
    start: &WeightVector,
    data: &Dataset,
    config: &TrainConfig,
    monitor: &TrainMonitor,
) -> Result<TrainRun> {
    start.matches(arch)?;
    arch.loss_of(start.as_slice(), data)?;
    config.validate(data.len())?;

    let dim = start.len();
    let keep_history = dim.saturating_mul(config.epochs.saturating_add(1)) <= HISTORY_BUDGET;
    let planned = checkpoint_epochs(config.epochs, config.checkpoint_count);

    let mut history: Vec<f64> = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut captured: Vec<Checkpoint> = Vec::new();
    let stopping = Stopping::Live {
        config,
        monitor,
        started: Instant::now(),
    };
    let (curve, termination) = run_epochs(
        arch,
        start.as_slice(),
        data,
        config,
        config.epochs,
        stopping,
        &mut |e, p, l| {
            if keep_history {
                history.extend_from_slice(p);
                losses.push(l);
            } else if planned.binary_search(&e).is_ok() {
                captured.push(Checkpoint {
                    epoch: e,
                    weights: WeightVector::from_raw(p.to_vec()),
                    loss: l,
                });
            }
        },
    )?;

    let executed = curve.len();
    let epochs = checkpoint_epochs(executed, config.checkpoint_count);
    let checkpoints = if keep_history {
        epochs
            .iter()
            .map(|&e| Checkpoint {
                epoch: e,
                weights: WeightVector::from_raw(history[e * dim..(e + 1) * dim].to_vec()),
                loss: losses[e],
            })
            .collect()
    } else if executed == config.epochs {
        captured
    } else {
        let mut replayed = Vec::with_capacity(epochs.len());
        run_epochs(
            arch,
            start.as_slice(),
            data,
            config,
            executed,
            Stopping::Replay,
            &mut |e, p, l| {
                if epochs.binary_search(&e).is_ok() {
                    replayed.push(Checkpoint {
                        epoch: e,
                        weights: WeightVector::from_raw(p.to_vec()),
                        loss: l,
                    });
                }
            },
        )?;
        replayed
    };

    let initial_loss = checkpoints[0].loss;
    Ok(TrainRun {
        loss_curve: curve,
        initial_loss,
        checkpoints,
        termination,
    })
}
