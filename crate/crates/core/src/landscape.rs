//! The four landscape views: axis-parallel slice charts, linear
//! interpolation paths, random 2D plane slices and eigenvector slices.
//!
//! Every view evaluates the loss on the training set with the same code path
//! as [`NetworkArch::loss`], so the zero-offset sample of any slice is
//! bitwise equal to the loss of the point it passes through.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::Control;
use crate::network::{norm, Dataset, NetworkArch, ParamLabel, WeightVector};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

pub const DEFAULT_SLICE_RESOLUTION: usize = 81;
pub const DEFAULT_PLANE_RESOLUTION: usize = 41;
pub const DEFAULT_INTERPOLATION_NODES: usize = 101;
pub const DEFAULT_ALPHA_RANGE: (f64, f64) = (-0.1, 1.1);

/// A point to slice through.
#[derive(Debug, Clone, Copy)]
pub struct SlicePoint<'a> {
    pub id: &'a str,
    pub weights: &'a WeightVector,
    pub is_target: bool,
}

/// `resolution` offsets in `[-range, range]`, symmetric, with an exact 0 in
/// the middle.
pub fn symmetric_offsets(range: f64, resolution: usize) -> Result<Vec<f64>> {
    if resolution < 3 || resolution.is_multiple_of(2) {
        return Err(Error::invalid(
            "resolution",
            "resolution must be odd and at least 3 (offset 0 must be a sample node)",
        ));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::invalid("range", "range must be positive"));
    }
    let c = (resolution - 1) / 2;
    Ok((0..resolution)
        .map(|j| range * (j as f64 - c as f64) / c as f64)
        .collect())
}

/// One series of a [`SliceChart`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceSeries {
    pub origin: String,
    pub is_target: bool,
    /// Loss of the origin point itself (equals `losses[resolution / 2]`).
    pub origin_loss: f64,
    pub losses: Vec<f64>,
}

/// All slices along one parameter axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceChart {
    pub param_index: usize,
    pub label: ParamLabel,
    /// `w{src}-{dst}` or `b{dst}`.
    pub name: String,
    pub slice_range: f64,
    pub resolution: usize,
    /// Offsets shared by every series; added to each origin's own coordinate.
    pub offsets: Vec<f64>,
    pub slices: Vec<SliceSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Direction {
    Axis(usize),
    Eigen(usize),
}

/// A standalone 1D slice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slice1D {
    pub direction: Direction,
    pub origin: String,
    pub is_target: bool,
    pub offsets: Vec<f64>,
    pub losses: Vec<f64>,
}

impl SliceChart {
    pub fn slice(&self, i: usize) -> Slice1D {
        let s = &self.slices[i];
        Slice1D {
            direction: Direction::Axis(self.param_index),
            origin: s.origin.clone(),
            is_target: s.is_target,
            offsets: self.offsets.clone(),
            losses: s.losses.clone(),
        }
    }

    pub fn target(&self) -> &SliceSeries {
        self.slices
            .iter()
            .find(|s| s.is_target)
            .expect("chart has a target slice")
    }
}

fn check_regressor(arch: &NetworkArch, data: &Dataset) -> Result<()> {
    arch.loss_of(&vec![0.0; arch.param_count()], data)
        .map(|_| ())
}

/// One chart per parameter; each chart has one series per point.
pub fn axis_slices(
    arch: &NetworkArch,
    data: &Dataset,
    points: &[SlicePoint<'_>],
    slice_range: f64,
    resolution: usize,
) -> Result<Vec<SliceChart>> {
    axis_slices_with(arch, data, points, slice_range, resolution, &Control::new())
}

pub fn axis_slices_with(
    arch: &NetworkArch,
    data: &Dataset,
    points: &[SlicePoint<'_>],
    slice_range: f64,
    resolution: usize,
    control: &Control,
) -> Result<Vec<SliceChart>> {
    let offsets = symmetric_offsets(slice_range, resolution)?;
    check_regressor(arch, data)?;
    if points.iter().filter(|p| p.is_target).count() != 1 {
        return Err(Error::invalid(
            "points",
            "exactly one point must be the target",
        ));
    }
    for p in points {
        p.weights.matches(arch)?;
    }
    let dim = arch.param_count();
    control.set_total(dim * points.len());

    let origin_losses: Vec<f64> = points
        .par_iter()
        .map(|p| arch.loss_unchecked(p.weights.as_slice(), data))
        .collect();

    let series: Vec<Vec<f64>> = (0..dim * points.len())
        .into_par_iter()
        .map(|task| {
            let (d, p) = (task / points.len(), task % points.len());
            let base = points[p].weights.as_slice();
            let mut w = base.to_vec();
            let mut losses = Vec::with_capacity(offsets.len());
            for &off in &offsets {
                control.checkpoint()?;
                w[d] = base[d] + off;
                losses.push(arch.loss_unchecked(&w, data));
            }
            control.advance(1);
            Ok(losses)
        })
        .collect::<Result<_>>()?;

    let mut series = series.into_iter();
    Ok((0..dim)
        .map(|d| {
            let label = arch.label(d).unwrap();
            SliceChart {
                param_index: d,
                label,
                name: label.to_string(),
                slice_range,
                resolution,
                offsets: offsets.clone(),
                slices: points
                    .iter()
                    .zip(&origin_losses)
                    .map(|(p, &origin_loss)| SliceSeries {
                        origin: p.id.to_string(),
                        is_target: p.is_target,
                        origin_loss,
                        losses: series.next().unwrap(),
                    })
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpolationPath {
    pub alphas: Vec<f64>,
    pub train_losses: Vec<f64>,
    pub test_losses: Vec<f64>,
    pub endpoints: (String, String),
    pub warnings: Vec<String>,
}

/// `n` nodes spanning `[lo, hi]`, snapped to multiples of `2^-20` so that
/// `1 − α` is exact and reversing the endpoints reproduces the path bitwise.
/// When 0 or 1 lies inside the interval, the nearest node is moved onto it.
pub fn alpha_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::invalid(
            "alphas",
            "need at least 2 nodes over a nonempty interval",
        ));
    }
    let scale = (1u64 << 20) as f64;
    let mut alphas: Vec<f64> = (0..n)
        .map(|i| {
            let a = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (a * scale).round() / scale
        })
        .collect();
    for anchor in [0.0, 1.0] {
        if lo <= anchor && anchor <= hi {
            let i = alphas
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - anchor).abs().total_cmp(&(b.1 - anchor).abs()))
                .unwrap()
                .0;
            alphas[i] = anchor;
        }
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("alphas", "too many nodes for the interval"));
    }
    Ok(alphas)
}

pub fn default_alphas() -> Vec<f64> {
    alpha_grid(
        DEFAULT_ALPHA_RANGE.0,
        DEFAULT_ALPHA_RANGE.1,
        DEFAULT_INTERPOLATION_NODES,
    )
    .unwrap()
}

/// Train and test loss along `(1 − α)·θ0 + α·θ1`.
pub fn interpolate(
    arch: &NetworkArch,
    theta0: (&str, &WeightVector),
    theta1: (&str, &WeightVector),
    train: &Dataset,
    test: &Dataset,
    alphas: &[f64],
) -> Result<InterpolationPath> {
    interpolate_with(arch, theta0, theta1, train, test, alphas, &Control::new())
}

pub fn interpolate_with(
    arch: &NetworkArch,
    theta0: (&str, &WeightVector),
    theta1: (&str, &WeightVector),
    train: &Dataset,
    test: &Dataset,
    alphas: &[f64],
    control: &Control,
) -> Result<InterpolationPath> {
    check_regressor(arch, train)?;
    check_regressor(arch, test)?;
    theta0.1.matches(arch)?;
    theta1.1.matches(arch)?;
    if alphas.is_empty() {
        return Err(Error::invalid("alphas", "at least one node is required"));
    }
    if alphas.iter().any(|a| !a.is_finite()) || alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "alphas",
            "nodes must be finite and strictly increasing",
        ));
    }
    let mut warnings = Vec::new();
    if theta0.1 == theta1.1 {
        warnings.push("endpoints are identical; the path is constant".to_string());
    }
    control.set_total(alphas.len());
    let (a, b) = (theta0.1.as_slice(), theta1.1.as_slice());
    let losses: Vec<(f64, f64)> = alphas
        .par_iter()
        .map(|&alpha| {
            control.checkpoint()?;
            let beta = 1.0 - alpha;
            let w: Vec<f64> = a.iter().zip(b).map(|(x, y)| beta * x + alpha * y).collect();
            let out = (
                arch.loss_unchecked(&w, train),
                arch.loss_unchecked(&w, test),
            );
            control.advance(1);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (train_losses, test_losses) = losses.into_iter().unzip();
    Ok(InterpolationPath {
        alphas: alphas.to_vec(),
        train_losses,
        test_losses,
        endpoints: (theta0.0.to_string(), theta1.0.to_string()),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneConfig {
    pub resolution: usize,
    pub extent: f64,
    /// Direction seed; drawn fresh when absent and reported in the result.
    pub seed: Option<u64>,
    #[serde(default)]
    pub orthogonalize: bool,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_PLANE_RESOLUTION,
            extent: 1.0,
            seed: None,
            orthogonalize: false,
        }
    }
}

/// Loss on `θ0 + α·δ + β·η` over `[−extent, extent]²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneSlice {
    pub origin: String,
    pub seed: u64,
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
    pub extent: f64,
    pub resolution: usize,
    /// Coordinates along δ (rows) and η (columns).
    pub coords: Vec<f64>,
    /// `losses[i][j]` at `α = coords[i]`, `β = coords[j]`.
    pub losses: Vec<Vec<f64>>,
    pub origin_loss: f64,
}

impl PlaneSlice {
    pub fn center(&self) -> f64 {
        let c = self.resolution / 2;
        self.losses[c][c]
    }

    pub fn loss_range(&self) -> f64 {
        let (lo, hi) = self
            .losses
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        hi - lo
    }
}

/// Two independent standard-normal directions scaled to unit length.
pub fn random_directions(dim: usize, seed: u64, orthogonalize: bool) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, Stream::PlaneDirections);
    let mut draw = || -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
                return v;
            }
        }
    };
    let delta = draw();
    let mut eta = draw();
    if orthogonalize && dim > 1 {
        loop {
            let c: f64 = eta.iter().zip(&delta).map(|(a, b)| a * b).sum();
            eta.iter_mut().zip(&delta).for_each(|(e, d)| *e -= c * d);
            let n = norm(&eta);
            if n > 1e-8 {
                eta.iter_mut().for_each(|x| *x /= n);
                break;
            }
            eta = draw();
        }
    }
    (delta, eta)
}

pub fn plane_slice(
    arch: &NetworkArch,
    data: &Dataset,
    origin: (&str, &WeightVector),
    config: &PlaneConfig,
) -> Result<PlaneSlice> {
    plane_slice_with(arch, data, origin, config, &Control::new())
}

pub fn plane_slice_with(
    arch: &NetworkArch,
    data: &Dataset,
    origin: (&str, &WeightVector),
    config: &PlaneConfig,
    control: &Control,
) -> Result<PlaneSlice> {
    let coords = symmetric_offsets(config.extent, config.resolution).map_err(|e| match e {
        Error::InvalidArgument {
            field: "range",
            message,
        } => Error::InvalidArgument {
            field: "extent",
            message,
        },
        e => e,
    })?;
    check_regressor(arch, data)?;
    origin.1.matches(arch)?;
    let seed = config.seed.unwrap_or_else(|| rand::rng().random());
    let (delta, eta) = random_directions(arch.param_count(), seed, config.orthogonalize);
    let theta = origin.1.as_slice();
    let n = config.resolution;
    control.set_total(n);
    let losses: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let alpha = coords[i];
            let mut row = Vec::with_capacity(n);
            let mut w = vec![0.0; theta.len()];
            for &beta in &coords {
                control.checkpoint()?;
                for k in 0..theta.len() {
                    // θ + (αδ + βη): the bracket is symmetric in (δ, η).
                    w[k] = theta[k] + (alpha * delta[k] + beta * eta[k]);
                }
                row.push(arch.loss_unchecked(&w, data));
            }
            control.advance(1);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(PlaneSlice {
        origin: origin.0.to_string(),
        seed,
        origin_loss: arch.loss_unchecked(theta, data),
        delta,
        eta,
        extent: config.extent,
        resolution: n,
        coords,
        losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvSlices {
    pub slices: Vec<Slice1D>,
    pub origin_loss: f64,
    pub warnings: Vec<String>,
}

/// Slices along each direction: `loss(origin + offset·v)`.
pub fn ev_slices(
    arch: &NetworkArch,
    data: &Dataset,
    origin: (&str, &WeightVector),
    eigvecs: &[Vec<f64>],
    range: f64,
    resolution: usize,
) -> Result<EvSlices> {
    let offsets = symmetric_offsets(range, resolution)?;
    check_regressor(arch, data)?;
    origin.1.matches(arch)?;
    let theta = origin.1.as_slice();
    let mut warnings = Vec::new();
    let mut dirs = Vec::with_capacity(eigvecs.len());
    for (k, v) in eigvecs.iter().enumerate() {
        if v.len() != theta.len() {
            return Err(Error::Dimension {
                what: "eigenvector",
                expected: theta.len(),
                actual: v.len(),
            });
        }
        let n = norm(v);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::invalid(
                "eigvecs",
                format!("eigenvector {k} has zero or non-finite norm"),
            ));
        }
        if (n - 1.0).abs() > 1e-10 {
            warnings.push(format!("eigenvector {k} had norm {n}; normalized"));
            dirs.push(v.iter().map(|x| x / n).collect::<Vec<f64>>());
        } else {
            dirs.push(v.clone());
        }
    }
    let slices = dirs
        .par_iter()
        .enumerate()
        .map(|(k, v)| {
            let losses = offsets
                .iter()
                .map(|&off| {
                    let w: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + off * d).collect();
                    arch.loss_unchecked(&w, data)
                })
                .collect();
            Slice1D {
                direction: Direction::Eigen(k),
                origin: origin.0.to_string(),
                is_target: true,
                offsets: offsets.clone(),
                losses,
            }
        })
        .collect();
    Ok(EvSlices {
        slices,
        origin_loss: arch.loss_unchecked(theta, data),
        warnings,
    })
}

/// Least-squares fit `y ≈ a·x² + b·x + c`; returns `(a, b, c, max |residual|)`.
pub fn fit_quadratic(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    assert!(xs.len() == ys.len() && xs.len() >= 3);
    // Normal equations on centred, scaled abscissae for conditioning.
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let spread = xs
        .iter()
        .fold(0.0f64, |m, x| m.max((x - mean).abs()))
        .max(f64::MIN_POSITIVE);
    let t: Vec<f64> = xs.iter().map(|x| (x - mean) / spread).collect();
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (ti, yi) in t.iter().zip(ys) {
        let basis = [ti * ti, *ti, 1.0];
        for r in 0..3 {
            rhs[r] += basis[r] * yi;
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
        }
    }
    let sol = solve3(m, rhs);
    let (p, q, r) = (sol[0], sol[1], sol[2]);
    let residual = t
        .iter()
        .zip(ys)
        .map(|(ti, yi)| (p * ti * ti + q * ti + r - yi).abs())
        .fold(0.0, f64::max);
    // Undo the substitution t = (x − mean)/spread.
    let a = p / (spread * spread);
    let b = q / spread - 2.0 * a * mean;
    let c = r - q * mean / spread + a * mean * mean;
    (a, b, c, residual)
}

fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (dst, src) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    x
}
