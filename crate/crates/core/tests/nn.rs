mod common;

use cmarl::nn::{softmax, Adam, AdamConfig, CategoricalPolicy, Mlp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn forward_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = Mlp::new(&[4, 7, 5, 3], &mut rng).unwrap();
    for _ in 0..20 {
        let x = random_vec(&mut rng, 4, 3.0);
        let fast = net.forward(&x).unwrap();
        let (slow, _) = naive_forward(&net, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let worst = worst_of(100, &mut rng, mlp_case);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn log_prob_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let worst = worst_of(100, &mut rng, log_prob_case);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

/// Reference recurrence written out for a single scalar parameter.
fn reference_adam(theta0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut th) = (0.0, 0.0, theta0);
    let mut path = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * th;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        th -= lr * mh / (vh.sqrt() + eps);
        path.push(th);
    }
    path
}

#[test]
fn adam_minimizes_quadratic_like_the_reference() {
    let mut adam = Adam::new(1, 0.1, AdamConfig::default());
    let mut theta = [1.0];
    let reference = reference_adam(1.0, 0.1, 200);
    for (k, r) in reference.iter().enumerate() {
        let g = [2.0 * theta[0]];
        adam.step(&mut theta, &g).unwrap();
        assert_eq!(adam.steps(), k as u64 + 1);
        assert!((theta[0] - r).abs() < 1e-12);
    }
    assert!(theta[0].abs() < 0.05);
    assert_eq!(adam.moments().0.len(), 1);
}

#[test]
fn sampling_frequencies_match_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let policy = CategoricalPolicy::with_architecture(3, &[8], 5, &mut rng).unwrap();
    let obs = [0.3, -1.2, 0.8];
    let probs = policy.probabilities(&obs).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let n = 100_000;
    let mut counts = [0usize; 5];
    for _ in 0..n {
        let (a, logp) = policy.sample(&obs, &mut rng).unwrap();
        assert!(a < 5);
        assert!((logp - probs[a].ln()).abs() < 1e-12);
        counts[a] += 1;
    }
    for (c, p) in counts.iter().zip(&probs) {
        let freq = *c as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se + 1e-12, "freq {freq} vs p {p}");
    }
}

#[test]
fn logit_gradient_on_a_linear_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let policy = CategoricalPolicy::with_architecture(2, &[], 3, &mut rng).unwrap();
    let obs = [0.5, -2.0];
    let p = softmax(&policy.logits(&obs).unwrap());
    let grad = policy.log_prob_grad(&obs, 1).unwrap();
    // weights are row-major (action x input), biases follow
    for k in 0..3 {
        let d = if k == 1 { 1.0 } else { 0.0 } - p[k];
        assert!((grad.as_slice()[6 + k] - d).abs() < 1e-12);
        for i in 0..2 {
            assert!((grad.as_slice()[k * 2 + i] - d * obs[i]).abs() < 1e-12);
        }
    }
}
