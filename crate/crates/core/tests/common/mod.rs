#![allow(dead_code)]

use losslens::dataset::{generate, DataConfig};
use losslens::expr::parse;
use losslens::optimizer::{train, Algorithm, TrainConfig};
use losslens::{Activation, Dataset, LossKind, NetworkArch, WeightVector};

pub const DATA_SEED: u64 = 0;

pub fn arch() -> NetworkArch {
    NetworkArch::new(vec![2, 4, 3, 1], Activation::Sigmoid, LossKind::Mse).unwrap()
}

/// 256 train and 256 test samples of `sin(x) + sin(y)` on `[0, 5]²`.
pub fn data() -> (Dataset, Dataset) {
    generate(&DataConfig::new(parse("sin(x)+sin(y)").unwrap(), DATA_SEED)).unwrap()
}

pub fn random_point(seed: u64, range: f64) -> WeightVector {
    WeightVector::random_uniform(31, range, seed).unwrap()
}

/// Adam at lr 0.01 for 50k epochs, then 20k more at lr 1e-3.
pub fn minimizer(train_data: &Dataset) -> WeightVector {
    let arch = arch();
    let mut w = random_point(1, 1.0);
    for (lr, epochs) in [(0.01, 50_000), (1e-3, 20_000)] {
        let run = train(
            &arch,
            &w,
            train_data,
            &TrainConfig::new(Algorithm::Adam, lr, epochs),
        )
        .unwrap();
        w = run.final_weights().clone();
    }
    w
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of the loss, step `h`.
pub fn fd_gradient(arch: &NetworkArch, w: &[f64], data: &Dataset, h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let mut p = w.to_vec();
            p[i] = w[i] + h;
            let up = arch.loss_of(&p, data).unwrap();
            p[i] = w[i] - h;
            let down = arch.loss_of(&p, data).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}
