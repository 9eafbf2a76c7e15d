mod common;

use common::{arch, data, fd_gradient, max_rel_err, random_point};
use losslens::network::ParamKind;
use losslens::{Activation, Dataset, LossKind, NetworkArch, WeightVector};
use proptest::prelude::*;

/// Straightforward re-implementation: explicit per-layer matrices.
fn reference_forward(layers: &[usize], act: fn(f64) -> f64, w: &[f64], input: [f64; 2]) -> f64 {
    let mut values = input.to_vec();
    let mut k = 0;
    for l in 0..layers.len() - 1 {
        let (n_in, n_out) = (layers[l], layers[l + 1]);
        let matrix = &w[k..k + n_in * n_out];
        let bias = &w[k + n_in * n_out..k + n_in * n_out + n_out];
        k += n_in * n_out + n_out;
        let last = l + 2 == layers.len();
        values = (0..n_out)
            .map(|r| {
                let z = bias[r]
                    + (0..n_in)
                        .map(|c| matrix[r * n_in + c] * values[c])
                        .sum::<f64>();
                if last {
                    z
                } else {
                    act(z)
                }
            })
            .collect();
    }
    values[0]
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn forward_matches_reference_implementation() {
    let arch = arch();
    for seed in 0..10 {
        let w = random_point(seed, 2.0);
        let ours = arch.forward(&w, 1.0, 2.0).unwrap();
        let theirs = reference_forward(&[2, 4, 3, 1], sigmoid, w.as_slice(), [1.0, 2.0]);
        assert!((ours - theirs).abs() < 1e-12, "{ours} vs {theirs}");
    }
    let tanh = NetworkArch::new(vec![2, 5, 1], Activation::Tanh, LossKind::Mse).unwrap();
    let w = WeightVector::random_uniform(tanh.param_count(), 1.5, 3).unwrap();
    let ours = tanh.forward(&w, -0.4, 3.0).unwrap();
    let theirs = reference_forward(&[2, 5, 1], f64::tanh, w.as_slice(), [-0.4, 3.0]);
    assert!((ours - theirs).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let (train, _) = data();
    for (act, name) in [(Activation::Sigmoid, "sigmoid"), (Activation::Tanh, "tanh")] {
        let arch = NetworkArch::new(vec![2, 4, 3, 1], act, LossKind::Mse).unwrap();
        for seed in 0..10 {
            let w = random_point(seed, 1.0);
            let g = arch.gradient(&w, &train).unwrap();
            let fd = fd_gradient(&arch, w.as_slice(), &train, 1e-5);
            let err = max_rel_err(g.as_slice(), &fd, 1e-8);
            assert!(err < 1e-6, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn zero_network_loss_is_mean_square_target() {
    let arch = arch();
    let (train, test) = data();
    for d in [&train, &test] {
        let mean_sq = d.targets().iter().map(|t| t * t).sum::<f64>() / d.len() as f64;
        let loss = arch.loss(&WeightVector::zeros(31), d).unwrap();
        assert!((loss - mean_sq).abs() <= 1e-14 * mean_sq);
        // E[(sin x + sin y)^2] over [0,5]^2 is about 1.096.
        assert!((loss - 1.096).abs() < 0.15, "{loss}");
    }
}

#[test]
fn perfect_predictor_has_zero_loss() {
    let arch = arch();
    let (train, _) = data();
    let w = random_point(4, 1.0);
    let targets = train
        .inputs()
        .iter()
        .map(|p| arch.forward(&w, p[0], p[1]).unwrap())
        .collect();
    let copied = Dataset::new(train.inputs().to_vec(), targets).unwrap();
    assert_eq!(arch.loss(&w, &copied).unwrap(), 0.0);
    assert!(arch
        .gradient(&w, &copied)
        .unwrap()
        .as_slice()
        .iter()
        .all(|&g| g == 0.0));
}

#[test]
fn hidden_permutation_leaves_loss_unchanged() {
    let arch = arch();
    let (train, _) = data();
    let w = random_point(11, 1.5);
    let w = w.as_slice();
    // First hidden layer: neurons 2..=5 permuted by perm. Layout offsets:
    // W0 [0, 8), b0 [8, 12), W1 [12, 24), b1 [24, 27), W2 [27, 30), b2 30.
    let perm = [2usize, 0, 3, 1];
    let mut p = w.to_vec();
    for (new, &old) in perm.iter().enumerate() {
        p[new * 2] = w[old * 2];
        p[new * 2 + 1] = w[old * 2 + 1];
        p[8 + new] = w[8 + old];
        for r in 0..3 {
            p[12 + r * 4 + new] = w[12 + r * 4 + old];
        }
    }
    // Second hidden layer: swap neurons 6 and 8.
    let mut q = p.clone();
    for (new, old) in [(0usize, 2usize), (2, 0)] {
        for c in 0..4 {
            q[12 + new * 4 + c] = p[12 + old * 4 + c];
        }
        q[24 + new] = p[24 + old];
        q[27 + new] = p[27 + old];
    }
    assert_ne!(q, w);
    let a = arch.loss_of(w, &train).unwrap();
    let b = arch.loss_of(&q, &train).unwrap();
    assert!((a - b).abs() <= 1e-13 * a, "{a} vs {b}");
}

#[test]
fn layout_matches_documented_labels() {
    let arch = arch();
    let names: Vec<String> = arch.labels().iter().map(|l| l.to_string()).collect();
    assert_eq!(&names[..3], ["w0-2", "w1-2", "w0-3"]);
    assert_eq!(&names[8..12], ["b2", "b3", "b4", "b5"]);
    assert_eq!(names[12], "w2-6");
    assert_eq!(&names[27..], ["w6-9", "w7-9", "w8-9", "b9"]);
    let biases = arch
        .labels()
        .iter()
        .filter(|l| l.kind == ParamKind::Bias)
        .count();
    assert_eq!(biases, 8);
}

#[test]
fn loss_is_pure() {
    let arch = arch();
    let (train, _) = data();
    let w = random_point(5, 1.0);
    let a = arch.loss(&w, &train).unwrap();
    let b = arch.loss(&w, &train).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let (l, g) = arch.loss_and_gradient(w.as_slice(), &train, None).unwrap();
    assert_eq!(l.to_bits(), a.to_bits());
    assert_eq!(g, arch.gradient(&w, &train).unwrap().into_vec());
}

proptest! {
    #[test]
    fn label_index_bijection(layers in prop::collection::vec(1usize..6, 1..4)) {
        let mut sizes = vec![2];
        sizes.extend(layers);
        sizes.push(1);
        let arch = NetworkArch::new(sizes, Activation::Relu, LossKind::Mae).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..arch.param_count() {
            let label = arch.label(i).unwrap();
            prop_assert_eq!(arch.index_of(&label), Some(i));
            prop_assert!(seen.insert(label.to_string()));
        }
        prop_assert!(arch.label(arch.param_count()).is_none());
    }

    #[test]
    fn mse_gradient_matches_differences_anywhere(seed in 0u64..1000) {
        let arch = NetworkArch::new(vec![2, 3, 1], Activation::Tanh, LossKind::Mse).unwrap();
        let inputs: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 * 0.25, 1.0 - i as f64 * 0.1]).collect();
        let targets = inputs.iter().map(|p| (p[0] * p[1]).cos()).collect();
        let d = Dataset::new(inputs, targets).unwrap();
        let w = WeightVector::random_uniform(arch.param_count(), 1.0, seed).unwrap();
        let g = arch.gradient(&w, &d).unwrap();
        let fd = fd_gradient(&arch, w.as_slice(), &d, 1e-5);
        prop_assert!(max_rel_err(g.as_slice(), &fd, 1e-8) < 1e-6);
    }
}
