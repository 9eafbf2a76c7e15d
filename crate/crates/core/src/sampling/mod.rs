//! Focus points sampled in a hypercube around a target point.

mod sobol;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sobol::Sobol;

use crate::network::{Dataset, NetworkArch, WeightVector};
use crate::rng::{stream_rng, Stream};
use crate::store::TargetPoint;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingAlgorithm {
    Uniform,
    Sobol,
    /// Sobol batches at ranges `r, r/2, r/4, ...`.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub algorithm: SamplingAlgorithm,
    pub count: usize,
    /// Half-width of the hypercube around the target point.
    pub range: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_levels")]
    pub mixed_levels: usize,
}

fn default_levels() -> usize {
    3
}

impl SamplingConfig {
    pub fn new(algorithm: SamplingAlgorithm, count: usize, range: f64) -> Self {
        Self {
            algorithm,
            count,
            range,
            seed: 0,
            mixed_levels: default_levels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid(
                "count",
                "at least one focus point is required",
            ));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(Error::invalid("range", "sampling range must be positive"));
        }
        if self.algorithm == SamplingAlgorithm::Mixed && self.mixed_levels == 0 {
            return Err(Error::invalid(
                "mixed_levels",
                "at least one level is required",
            ));
        }
        if self.count as u64 > Sobol::MAX_INDEX {
            return Err(Error::invalid("count", "too many focus points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocusPoint {
    /// Position within its focus-point set.
    pub id: usize,
    pub weights: WeightVector,
    pub loss: f64,
    pub parent_target: String,
}

/// Maps `u ∈ [0, 1]` to `center ± range`, never leaving the closed box.
fn place(center: f64, range: f64, u: f64) -> f64 {
    let mut w = center + range * (2.0 * u - 1.0);
    while (w - center).abs() > range {
        w = if w > center {
            w.next_down()
        } else {
            w.next_up()
        };
    }
    w
}

/// Raw sample coordinates around `center`; no losses.
pub fn sample_points(center: &[f64], config: &SamplingConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let dims = center.len();
    let r = config.range;
    let map = |unit: Vec<f64>, range: f64| -> Vec<f64> {
        center
            .iter()
            .zip(unit)
            .map(|(&c, u)| place(c, range, u))
            .collect()
    };
    Ok(match config.algorithm {
        SamplingAlgorithm::Uniform => {
            let mut rng = stream_rng(config.seed, Stream::Sampling);
            (0..config.count)
                .map(|_| {
                    center
                        .iter()
                        .map(|&c| place(c, r, rng.random::<f64>()))
                        .collect()
                })
                .collect()
        }
        SamplingAlgorithm::Sobol => Sobol::new(dims)?
            .points(0, config.count)
            .into_iter()
            .map(|u| map(u, r))
            .collect(),
        SamplingAlgorithm::Mixed => {
            let sobol = Sobol::new(dims)?;
            let levels = config.mixed_levels;
            let base = config.count / levels;
            let mut out = Vec::with_capacity(config.count);
            let mut start = 0u64;
            for level in 0..levels {
                let n = if level == 0 {
                    base + config.count % levels
                } else {
                    base
                };
                let range = r / 2f64.powi(level as i32);
                out.extend(sobol.points(start, n).into_iter().map(|u| map(u, range)));
                start += n as u64;
            }
            out
        }
    })
}

/// Samples focus points around `target` and evaluates their training loss.
pub fn sample_focus_points(
    arch: &NetworkArch,
    train: &Dataset,
    target: &TargetPoint,
    config: &SamplingConfig,
) -> Result<Vec<FocusPoint>> {
    target.weights.matches(arch)?;
    arch.loss_of(target.weights.as_slice(), train)?;
    let points = sample_points(target.weights.as_slice(), config)?;
    Ok(points
        .into_par_iter()
        .enumerate()
        .map(|(id, w)| FocusPoint {
            id,
            loss: arch.loss_unchecked(&w, train),
            weights: WeightVector::from_raw(w),
            parent_target: target.id.clone(),
        })
        .collect())
}

/// `(dim_a, dim_b)` coordinates of each point, for a scatter plot.
pub fn projection_2d<'a>(
    points: impl IntoIterator<Item = &'a WeightVector>,
    dim_a: usize,
    dim_b: usize,
) -> Result<Vec<[f64; 2]>> {
    points
        .into_iter()
        .map(|p| {
            for (field, d) in [("dim_a", dim_a), ("dim_b", dim_b)] {
                if d >= p.len() {
                    return Err(Error::invalid(
                        field,
                        format!("dimension {d} out of range 0..{}", p.len()),
                    ));
                }
            }
            Ok([p[dim_a], p[dim_b]])
        })
        .collect()
}
