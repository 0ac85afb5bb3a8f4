//! Analytic gradients against central finite differences of the loss.

use kc_core::disentangler::{DisentanglerNet, Mode};
use kc_core::numerics::{Rng, Tensor};
use kc_core::training::{gradients, loss, FeatureBatch};

const STEP: f64 = 1e-5;

fn perturbed(net: &DisentanglerNet, index: usize, delta: f64) -> DisentanglerNet {
    let mut weights: Vec<Tensor> = net.weights().to_vec();
    let mut p = net.p_values().to_vec();
    let mut i = index;
    for w in weights.iter_mut() {
        if i < w.len() {
            w.data_mut()[i] += delta;
            let sigma = (1..=net.order()).map(|k| net.sigma(k).to_vec()).collect();
            return DisentanglerNet::from_parts(net.mode(), weights, p, sigma).unwrap();
        }
        i -= w.len();
    }
    p[i] += delta;
    let sigma = (1..=net.order()).map(|k| net.sigma(k).to_vec()).collect();
    DisentanglerNet::from_parts(net.mode(), weights, p, sigma).unwrap()
}

fn random_point(seed: u64, mode: Mode) -> (DisentanglerNet, FeatureBatch, FeatureBatch, f64) {
    let mut rng = Rng::new(seed);
    let order = 1 + rng.below(3);
    let dim_in = 2 + rng.below(5);
    let dim_out = 1 + rng.below(5);
    let n = 2 + rng.below(5);
    let mut weights = vec![Tensor::new(vec![dim_out, dim_in], rng.normal_vec(dim_out * dim_in)).unwrap()];
    for _ in 0..order {
        weights.push(Tensor::new(vec![dim_in, dim_in], rng.normal_vec(dim_in * dim_in)).unwrap());
    }
    let p = rng.uniform_vec(order, -1.5, 1.5);
    let sigma = (0..order).map(|_| rng.uniform_vec(dim_in, 0.3, 3.0)).collect();
    let net = DisentanglerNet::from_parts(mode, weights, p, sigma).unwrap();
    let (xs, ys) = match mode {
        Mode::Dense => (vec![n, dim_in], vec![n, dim_out]),
        Mode::Conv1x1 => (vec![n, dim_in, 2, 1], vec![n, dim_out, 2, 1]),
    };
    let x = FeatureBatch::new(xs.clone(), rng.normal_vec(xs.iter().product())).unwrap();
    let y = FeatureBatch::new(ys.clone(), rng.normal_vec(ys.iter().product())).unwrap();
    let lambda = rng.uniform(0.0, 1.0);
    (net, x, y, lambda)
}

/// Worst relative error `|a − n| / max(|a|, |n|, 1e-6)` over every parameter.
fn worst_error(seed: u64, mode: Mode) -> f64 {
    let (net, x, y, lambda) = random_point(seed, mode);
    let g = gradients(&net, &x, &y, lambda).unwrap();
    let analytic: Vec<f64> = g
        .weights
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .chain(g.p.iter().copied())
        .collect();
    assert_eq!(analytic.len(), net.parameter_count());
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let up = loss(&perturbed(&net, i, STEP), &x, &y, lambda).unwrap();
        let down = loss(&perturbed(&net, i, -STEP), &x, &y, lambda).unwrap();
        let numeric = (up - down) / (2.0 * STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn dense_gradients_match_finite_differences() {
    for seed in 0..20 {
        let err = worst_error(1000 + seed, Mode::Dense);
        assert!(err <= 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    for seed in 0..5 {
        let err = worst_error(2000 + seed, Mode::Conv1x1);
        assert!(err <= 1e-4, "seed {seed}: relative error {err:e}");
    }
}
