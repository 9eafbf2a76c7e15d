//! Training/test data and value grids generated from a target expression.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::network::{Dataset, NetworkArch, WeightVector};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 256;
pub const DEFAULT_GRID_RESOLUTION: usize = 32;

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub expr: Expr,
    pub n_train: usize,
    pub n_test: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    pub seed: u64,
}

impl DataConfig {
    /// 256 train and 256 test samples on `[0, 5]²`.
    pub fn new(expr: Expr, seed: u64) -> Self {
        Self {
            expr,
            n_train: DEFAULT_SAMPLES,
            n_test: DEFAULT_SAMPLES,
            range_lo: 0.0,
            range_hi: 5.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range_lo.is_finite()
            && self.range_hi.is_finite()
            && self.range_lo < self.range_hi)
        {
            return Err(Error::invalid("range", "range_lo must be below range_hi"));
        }
        if self.n_train == 0 {
            return Err(Error::invalid(
                "n_train",
                "at least one training sample is required",
            ));
        }
        if self.n_test == 0 {
            return Err(Error::invalid(
                "n_test",
                "at least one test sample is required",
            ));
        }
        Ok(())
    }
}

fn draw(config: &DataConfig, n: usize, stream: Stream) -> Result<Dataset> {
    let mut rng = stream_rng(config.seed, stream);
    let (lo, hi) = (config.range_lo, config.range_hi);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = (lo + (hi - lo) * rng.random::<f64>()).min(hi);
        let y = (lo + (hi - lo) * rng.random::<f64>()).min(hi);
        targets.push(config.expr.eval(x, y)?);
        inputs.push([x, y]);
    }
    Dataset::new(inputs, targets)
}

/// Draws `(train, test)` i.i.d. uniform over the square; the two sets use
/// independent random streams of the same seed.
pub fn generate(config: &DataConfig) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let train = draw(config, config.n_train, Stream::TrainData)?;
    let test = draw(config, config.n_test, Stream::TestData)?;
    Ok((train, test))
}

/// Row-major `resolution × resolution` values; cell `(i, j)` sits at
/// `x = lo + i·step`, `y = lo + j·step` and is stored at `i·resolution + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub resolution: usize,
    pub range: [f64; 2],
    pub values: Vec<f64>,
}

impl Grid {
    pub fn coordinate(&self, i: usize) -> f64 {
        grid_coordinate(self.range[0], self.range[1], self.resolution, i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution + j]
    }
}

fn grid_coordinate(lo: f64, hi: f64, resolution: usize, i: usize) -> f64 {
    if i + 1 == resolution {
        hi
    } else {
        lo + i as f64 * (hi - lo) / (resolution - 1) as f64
    }
}

fn fill_grid(
    range: (f64, f64),
    resolution: usize,
    mut f: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<Grid> {
    let (lo, hi) = range;
    if resolution < 2 {
        return Err(Error::invalid(
            "resolution",
            "grid resolution must be at least 2",
        ));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid("range", "range_lo must be below range_hi"));
    }
    let mut values = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let x = grid_coordinate(lo, hi, resolution, i);
        for j in 0..resolution {
            values.push(f(x, grid_coordinate(lo, hi, resolution, j))?);
        }
    }
    Ok(Grid {
        resolution,
        range: [lo, hi],
        values,
    })
}

pub fn target_grid(expr: &Expr, range: (f64, f64), resolution: usize) -> Result<Grid> {
    fill_grid(range, resolution, |x, y| Ok(expr.eval(x, y)?))
}

pub fn prediction_grid(
    arch: &NetworkArch,
    weights: &WeightVector,
    range: (f64, f64),
    resolution: usize,
) -> Result<Grid> {
    weights.matches(arch)?;
    fill_grid(range, resolution, |x, y| arch.forward(weights, x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::network::{Activation, LossKind};

    #[test]
    fn deterministic_under_seed() {
        let cfg = DataConfig::new(parse("sin(x)+sin(y)").unwrap(), 7);
        let (a, b) = generate(&cfg).unwrap();
        let (c, d) = generate(&cfg).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, d);
        assert_ne!(a.inputs(), b.inputs());
        let other = generate(&DataConfig::new(parse("sin(x)+sin(y)").unwrap(), 8))
            .unwrap()
            .0;
        assert_ne!(a, other);
    }

    #[test]
    fn inputs_stay_in_range() {
        let mut cfg = DataConfig::new(parse("x*y").unwrap(), 3);
        cfg.range_lo = -2.0;
        cfg.range_hi = 0.5;
        cfg.n_train = 2000;
        let (train, _) = generate(&cfg).unwrap();
        assert!(train
            .inputs()
            .iter()
            .all(|p| p.iter().all(|&v| (-2.0..=0.5).contains(&v))));
    }

    #[test]
    fn zero_expression_gives_zero_loss() {
        let (train, _) = generate(&DataConfig::new(parse("0").unwrap(), 1)).unwrap();
        assert!(train.targets().iter().all(|&t| t == 0.0));
        let arch = NetworkArch::new(vec![2, 4, 3, 1], Activation::Sigmoid, LossKind::Mse).unwrap();
        assert_eq!(arch.loss(&WeightVector::zeros(31), &train).unwrap(), 0.0);
    }

    #[test]
    fn domain_error_aborts_generation() {
        let mut cfg = DataConfig::new(parse("log(x - 2)").unwrap(), 1);
        cfg.n_train = 50;
        let err = generate(&cfg).unwrap_err();
        match err {
            Error::Eval(e) => assert!(e.x <= 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let mut cfg = DataConfig::new(parse("x").unwrap(), 1);
        cfg.range_hi = cfg.range_lo;
        assert!(generate(&cfg).is_err());
        let mut cfg = DataConfig::new(parse("x").unwrap(), 1);
        cfg.n_test = 0;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn grids() {
        let g = target_grid(&parse("0").unwrap(), (0.0, 5.0), 32).unwrap();
        assert_eq!(g.values.len(), 1024);
        assert!(g.values.iter().all(|&v| v == 0.0));

        let g = target_grid(&parse("x + 10*y").unwrap(), (0.0, 5.0), 32).unwrap();
        assert_eq!(g.coordinate(0), 0.0);
        assert_eq!(g.coordinate(31), 5.0);
        assert_eq!(g.get(31, 0), 5.0);
        assert_eq!(g.get(0, 31), 50.0);

        let arch = NetworkArch::new(vec![2, 4, 3, 1], Activation::Sigmoid, LossKind::Mse).unwrap();
        let p = prediction_grid(&arch, &WeightVector::zeros(31), (0.0, 5.0), 32).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        assert!(prediction_grid(&arch, &WeightVector::zeros(3), (0.0, 5.0), 32).is_err());
        assert!(target_grid(&parse("x").unwrap(), (0.0, 5.0), 1).is_err());
    }
}
