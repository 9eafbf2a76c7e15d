//! Extreme Hessian eigenpairs from matrix-free Hessian-vector products.
//!
//! `H·v` is a central difference of exact gradients along `v`. Power
//! iteration with Hotelling deflation gives the dominant-magnitude pairs; a
//! second power iteration on `H − λ₁I` reaches the opposite end of the
//! spectrum. A dense finite-difference Hessian with cyclic Jacobi
//! diagonalization serves as an independent check for small networks.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::Control;
use crate::network::{norm, Dataset, NetworkArch, WeightVector};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Largest parameter count accepted by [`dense_hessian_oracle`].
pub const DENSE_LIMIT: usize = 200;

/// A twice-differentiable scalar function with an exact gradient.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn loss(&self, params: &[f64]) -> f64;
    fn gradient(&self, params: &[f64]) -> Vec<f64>;
}

/// Training loss of a network on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct NetworkObjective<'a> {
    pub arch: &'a NetworkArch,
    pub data: &'a Dataset,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(arch: &'a NetworkArch, data: &'a Dataset) -> Result<Self> {
        arch.loss_of(&vec![0.0; arch.param_count()], data)?;
        Ok(Self { arch, data })
    }
}

impl Objective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn loss(&self, params: &[f64]) -> f64 {
        self.arch.loss_unchecked(params, self.data)
    }

    fn gradient(&self, params: &[f64]) -> Vec<f64> {
        self.arch
            .loss_and_gradient_unchecked(params, self.data, None)
            .1
    }
}

/// `c · L(θ)`.
#[derive(Debug, Clone, Copy)]
pub struct Scaled<O> {
    pub inner: O,
    pub factor: f64,
}

impl<O: Objective> Objective for Scaled<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss(&self, params: &[f64]) -> f64 {
        self.factor * self.inner.loss(params)
    }

    fn gradient(&self, params: &[f64]) -> Vec<f64> {
        self.inner
            .gradient(params)
            .into_iter()
            .map(|g| g * self.factor)
            .collect()
    }
}

fn check_point(obj: &impl Objective, point: &[f64]) -> Result<()> {
    if point.len() != obj.dim() {
        return Err(Error::Dimension {
            what: "weight vector",
            expected: obj.dim(),
            actual: point.len(),
        });
    }
    Ok(())
}

fn fd_step(point: &[f64]) -> f64 {
    1e-5 * norm(point).max(1.0)
}

/// Central difference of gradients along `v/‖v‖`, rescaled by `‖v‖`.
pub fn hvp(obj: &impl Objective, point: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_point(obj, point)?;
    check_point(obj, v)?;
    let len = norm(v);
    if len == 0.0 || !len.is_finite() {
        return Err(Error::invalid(
            "v",
            "Hessian-vector product needs a nonzero finite vector",
        ));
    }
    Ok(hvp_unchecked(obj, point, v, len))
}

fn hvp_unchecked(obj: &impl Objective, point: &[f64], v: &[f64], len: f64) -> Vec<f64> {
    let eps = fd_step(point);
    let plus: Vec<f64> = point
        .iter()
        .zip(v)
        .map(|(p, d)| p + eps * d / len)
        .collect();
    let minus: Vec<f64> = point
        .iter()
        .zip(v)
        .map(|(p, d)| p - eps * d / len)
        .collect();
    let gp = obj.gradient(&plus);
    let gm = obj.gradient(&minus);
    gp.iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * eps) * len)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenConfig {
    /// Number of dominant pairs to compute.
    pub k: usize,
    /// Relative change of successive Rayleigh quotients that counts as converged.
    pub tol: f64,
    /// Residual bound `‖Hv − λv‖ ≤ residual_tol · |λ_scale|` for acceptance.
    pub residual_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            k: 5,
            tol: 1e-12,
            residual_tol: 1e-4,
            max_iter: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenResult {
    /// Dominant-magnitude eigenvalues, sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors in the same order as `eigenvalues`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub min_eigenvector: Vec<f64>,
    pub min_residual: f64,
    pub min_converged: bool,
    /// `|λ_min / λ_max|`.
    pub convexity_ratio: f64,
    pub hvp_count: usize,
}

impl EigenResult {
    pub fn all_converged(&self) -> bool {
        self.min_converged && self.converged.iter().all(|&c| c)
    }
}

/// First component above `1e-12` in magnitude is made positive.
fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

struct PowerOutcome {
    value: f64,
    vector: Vec<f64>,
    residual: f64,
    converged: bool,
}

/// Power iteration on `op`, keeping the iterate orthogonal to `against`.
fn power_iterate(
    mut op: impl FnMut(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    against: &[Vec<f64>],
    cfg: &EigenConfig,
    scale: f64,
    control: &Control,
) -> Result<PowerOutcome> {
    let project = |v: &mut Vec<f64>| {
        for u in against {
            let c = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    };
    let mut v = start;
    project(&mut v);
    normalize(&mut v);
    let mut prev = f64::NAN;
    let mut best = PowerOutcome {
        value: 0.0,
        vector: v.clone(),
        residual: f64::INFINITY,
        converged: false,
    };
    for _ in 0..cfg.max_iter {
        control.checkpoint()?;
        let mut hv = op(&v);
        project(&mut hv);
        let rho = dot(&v, &hv);
        let residual = hv
            .iter()
            .zip(&v)
            .map(|(h, x)| (h - rho * x).powi(2))
            .sum::<f64>()
            .sqrt();
        best = PowerOutcome {
            value: rho,
            vector: v.clone(),
            residual,
            converged: false,
        };
        let reference = scale.max(rho.abs()).max(f64::MIN_POSITIVE);
        if (rho - prev).abs() <= cfg.tol * reference && residual <= cfg.residual_tol * reference {
            best.converged = true;
            break;
        }
        prev = rho;
        if normalize(&mut hv) == 0.0 {
            // v lies in the null space of the deflated operator.
            best.converged = true;
            break;
        }
        v = hv;
    }
    Ok(best)
}

pub fn top_eigenpairs(
    obj: &impl Objective,
    point: &[f64],
    cfg: &EigenConfig,
) -> Result<EigenResult> {
    top_eigenpairs_with(obj, point, cfg, &Control::new())
}

/// Dominant eigenpairs by power iteration with deflation, plus the opposite
/// spectral end via the shifted operator `H − λ₁I`.
pub fn top_eigenpairs_with(
    obj: &impl Objective,
    point: &[f64],
    cfg: &EigenConfig,
    control: &Control,
) -> Result<EigenResult> {
    check_point(obj, point)?;
    let dim = obj.dim();
    if cfg.k == 0 || cfg.k > dim {
        return Err(Error::invalid("k", format!("must be between 1 and {dim}")));
    }
    let positive = |x: f64| x > 0.0 && !x.is_nan();
    if !positive(cfg.tol) || !positive(cfg.residual_tol) || cfg.max_iter == 0 {
        return Err(Error::invalid(
            "tol",
            "tolerances and max_iter must be positive",
        ));
    }
    let mut rng = stream_rng(cfg.seed, Stream::PowerIteration);
    let mut random_start =
        || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut hvp_count = 0usize;
    let mut apply = |v: &[f64]| -> Vec<f64> {
        hvp_count += 1;
        hvp_unchecked(obj, point, v, 1.0)
    };

    let mut values: Vec<f64> = Vec::with_capacity(cfg.k);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(cfg.k);
    let mut residuals = Vec::with_capacity(cfg.k);
    let mut converged = Vec::with_capacity(cfg.k);
    let mut scale = 0.0f64;
    for _ in 0..cfg.k {
        let found_values = values.clone();
        let found_vectors = vectors.clone();
        let deflated = |v: &[f64]| {
            let mut hv = apply(v);
            for (lam, u) in found_values.iter().zip(&found_vectors) {
                let c = lam * dot(u, v);
                hv.iter_mut().zip(u).for_each(|(h, x)| *h -= c * x);
            }
            hv
        };
        let out = power_iterate(deflated, random_start(), &vectors, cfg, scale, control)?;
        if values.is_empty() {
            scale = out.value.abs();
        }
        values.push(out.value);
        vectors.push(out.vector);
        residuals.push(out.residual);
        converged.push(out.converged);
    }

    let lambda1 = values[0];
    let shifted = |v: &[f64]| {
        let mut hv = apply(v);
        hv.iter_mut().zip(v).for_each(|(h, x)| *h -= lambda1 * x);
        hv
    };
    let other = power_iterate(shifted, random_start(), &[], cfg, scale, control)?;
    let other_value = other.value + lambda1;
    let (lambda_max, lambda_min, mut min_vector, min_residual, min_converged) =
        if other_value < lambda1 {
            (
                lambda1,
                other_value,
                other.vector,
                other.residual,
                other.converged,
            )
        } else {
            (
                other_value,
                lambda1,
                vectors[0].clone(),
                residuals[0],
                converged[0],
            )
        };
    fix_sign(&mut min_vector);

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut eigenvectors: Vec<Vec<f64>> = order.iter().map(|&i| vectors[i].clone()).collect();
    eigenvectors.iter_mut().for_each(|v| fix_sign(v));

    let convexity_ratio = if lambda_max == 0.0 {
        0.0
    } else {
        (lambda_min / lambda_max).abs()
    };
    Ok(EigenResult {
        eigenvalues: order.iter().map(|&i| values[i]).collect(),
        eigenvectors,
        residuals: order.iter().map(|&i| residuals[i]).collect(),
        converged: order.iter().map(|&i| converged[i]).collect(),
        lambda_max,
        lambda_min,
        min_eigenvector: min_vector,
        min_residual,
        min_converged,
        convexity_ratio,
        hvp_count,
    })
}

/// Convenience wrapper for a network's training loss.
pub fn network_eigenpairs(
    arch: &NetworkArch,
    weights: &WeightVector,
    data: &Dataset,
    cfg: &EigenConfig,
    control: &Control,
) -> Result<EigenResult> {
    weights.matches(arch)?;
    let obj = NetworkObjective::new(arch, data)?;
    top_eigenpairs_with(&obj, weights.as_slice(), cfg, control)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseHessian {
    pub dim: usize,
    /// Symmetrized `(H + Hᵀ)/2`, row-major.
    pub matrix: Vec<f64>,
    /// `max |H_ij − H_ji|` before symmetrization.
    pub symmetry_defect: f64,
    /// Full spectrum, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors matching `eigenvalues`.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl DenseHessian {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Dense finite-difference Hessian and its full eigendecomposition.
pub fn dense_hessian_oracle(obj: &impl Objective, point: &[f64]) -> Result<DenseHessian> {
    check_point(obj, point)?;
    let dim = obj.dim();
    if dim > DENSE_LIMIT {
        return Err(Error::Capability(format!(
            "dense Hessian is limited to {DENSE_LIMIT} parameters, got {dim}"
        )));
    }
    let eps = fd_step(point);
    let mut raw = vec![0.0; dim * dim];
    let mut shifted = point.to_vec();
    for i in 0..dim {
        shifted[i] = point[i] + eps;
        let gp = obj.gradient(&shifted);
        shifted[i] = point[i] - eps;
        let gm = obj.gradient(&shifted);
        shifted[i] = point[i];
        for j in 0..dim {
            raw[i * dim + j] = (gp[j] - gm[j]) / (2.0 * eps);
        }
    }
    let mut symmetry_defect = 0.0f64;
    let mut matrix = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            symmetry_defect = symmetry_defect.max((raw[i * dim + j] - raw[j * dim + i]).abs());
            matrix[i * dim + j] = 0.5 * (raw[i * dim + j] + raw[j * dim + i]);
        }
    }
    let (eigenvalues, eigenvectors) = jacobi_eigen(&matrix, dim);
    Ok(DenseHessian {
        dim,
        matrix,
        symmetry_defect,
        eigenvalues,
        eigenvectors,
    })
}

/// Cyclic Jacobi diagonalization of a symmetric row-major matrix. Returns
/// eigenvalues descending with their unit eigenvectors.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut col: Vec<f64> = (0..n).map(|k| v[k * n + i]).collect();
            fix_sign(&mut col);
            col
        })
        .collect();
    (values, vectors)
}
