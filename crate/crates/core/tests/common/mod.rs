#![allow(dead_code)]

use cmarl::critics::{critic_loss_and_grad, Critic, CriticKind};
use cmarl::nn::{Activation, CategoricalPolicy, Mlp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Cases whose rectifier inputs come this close to zero are redrawn: the
/// central difference would straddle a kink.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` with respect to every entry of `params`.
pub fn central_diff(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Scalar-by-scalar forward pass from the flat parameter layout (per layer:
/// row-major `outputs x inputs` weights, then biases). Also returns the
/// smallest rectifier pre-activation magnitude.
pub fn naive_forward(net: &Mlp, input: &[f64]) -> (Vec<f64>, f64) {
    let params = net.params();
    let mut offset = 0;
    let mut x = input.to_vec();
    let mut closest = f64::INFINITY;
    for layer in net.layers() {
        let (n_in, n_out) = (layer.inputs, layer.outputs);
        let mut y = vec![0.0; n_out];
        for o in 0..n_out {
            let mut z = params[offset + n_in * n_out + o];
            for i in 0..n_in {
                z += params[offset + o * n_in + i] * x[i];
            }
            y[o] = match layer.activation {
                Activation::Relu => {
                    closest = closest.min(z.abs());
                    z.max(0.0)
                }
                Activation::Linear => z,
            };
        }
        offset += n_out * (n_in + 1);
        x = y;
    }
    (x, closest)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_sizes(rng: &mut ChaCha8Rng, max_out: usize) -> Vec<usize> {
    let depth = rng.random_range(0..=2);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=8));
    }
    sizes.push(rng.random_range(1..=max_out));
    sizes
}

fn with_params(net: &Mlp, p: &[f64]) -> Mlp {
    let mut n = net.clone();
    n.params_mut().copy_from_slice(p);
    n
}

/// One randomized backward check; `None` when the case sits near a kink.
pub fn mlp_case(rng: &mut ChaCha8Rng) -> Option<f64> {
    let sizes = random_sizes(rng, 4);
    let net = Mlp::new(&sizes, rng).unwrap();
    let x = random_vec(rng, sizes[0], 2.0);
    let u = random_vec(rng, *sizes.last().unwrap(), 1.0);
    if naive_forward(&net, &x).1 < KINK_MARGIN {
        return None;
    }
    let analytic = net.backward(&x, &u).unwrap();
    let numeric = central_diff(net.params(), |p| {
        let out = with_params(&net, p).forward(&x).unwrap();
        out.iter().zip(&u).map(|(a, b)| a * b).sum()
    });
    Some(rel_err(analytic.as_slice(), &numeric))
}

/// Gradient of `log pi(a|o) + w H(pi(.|o))`.
pub fn log_prob_case(rng: &mut ChaCha8Rng) -> Option<f64> {
    let mut sizes = random_sizes(rng, 6);
    *sizes.last_mut().unwrap() = rng.random_range(2..=6);
    let policy = CategoricalPolicy::new(Mlp::new(&sizes, rng).unwrap());
    let obs = random_vec(rng, sizes[0], 2.0);
    let action = rng.random_range(0..policy.action_count());
    let w = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..1.0) };
    if naive_forward(policy.net(), &obs).1 < KINK_MARGIN {
        return None;
    }
    let mut analytic = cmarl::nn::ParamGrad::zeros(policy.net().param_count());
    policy.accumulate_log_prob_grad(&obs, action, 1.0, w, &mut analytic).unwrap();
    let numeric = central_diff(policy.net().params(), |p| {
        let pol = CategoricalPolicy::new(with_params(policy.net(), p));
        let probs = pol.probabilities(&obs).unwrap();
        let h: f64 = -probs.iter().map(|q| q * q.ln()).sum::<f64>();
        pol.log_prob(&obs, action).unwrap() + w * h
    });
    Some(rel_err(analytic.as_slice(), &numeric))
}

pub fn critic_case(rng: &mut ChaCha8Rng, kind: CriticKind) -> Option<f64> {
    let state_dim = rng.random_range(1..=5);
    let m = rng.random_range(1..=2);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
    let critic = Critic::new(kind, state_dim, m, &hidden, rng).unwrap();
    let lambda: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..3.0)).collect();
    let n = rng.random_range(1..=4);
    let states: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, state_dim, 2.0)).collect();
    let targets: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, critic.width(), 2.0)).collect();
    for x in &states {
        if naive_forward(critic.net(), &critic.input(x, &lambda).unwrap()).1 < KINK_MARGIN {
            return None;
        }
    }
    let (_, analytic) = critic_loss_and_grad(&critic, &states, &lambda, &targets).unwrap();
    let numeric = central_diff(critic.net().params(), |p| {
        let c = Critic::from_net(kind, m, with_params(critic.net(), p)).unwrap();
        critic_loss_and_grad(&c, &states, &lambda, &targets).unwrap().0
    });
    Some(rel_err(analytic.as_slice(), &numeric))
}

/// Runs `case` until `count` non-degenerate cases were checked; returns the
/// worst relative error.
pub fn worst_of(count: usize, rng: &mut ChaCha8Rng, mut case: impl FnMut(&mut ChaCha8Rng) -> Option<f64>) -> f64 {
    let mut done = 0;
    let mut worst: f64 = 0.0;
    let mut attempts = 0;
    while done < count {
        attempts += 1;
        assert!(attempts < count * 20, "too many degenerate cases");
        if let Some(e) = case(rng) {
            worst = worst.max(e);
            done += 1;
        }
    }
    worst
}
