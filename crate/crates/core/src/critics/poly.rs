//! Linear-in-features critics over polynomial features, used for policy
//! evaluation on the linear-quadratic testbed.

use super::{dot, CriticKind};

/// `[1, z_1..z_n, z_i z_j for i <= j]`.
pub fn quadratic_features(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut out = Vec::with_capacity(1 + n + n * (n + 1) / 2);
    out.push(1.0);
    out.extend_from_slice(z);
    for i in 0..n {
        for j in i..n {
            out.push(z[i] * z[j]);
        }
    }
    out
}

/// Generic: quadratic in the state. Input-augmented: quadratic in the state
/// and the dual variables. Structured: one quadratic head for the reward and
/// one per constraint, so with a fixed dual variable it spans exactly the
/// generic critic's function class.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCritic {
    kind: CriticKind,
    constraints: usize,
    weights: Vec<Vec<f64>>,
}

impl PolyCritic {
    pub fn new(kind: CriticKind, state_dim: usize, constraints: usize) -> Self {
        let x = vec![0.0; state_dim];
        let weights = match kind {
            CriticKind::Generic => vec![vec![0.0; quadratic_features(&x).len()]],
            CriticKind::InputAugmented => {
                let z = vec![0.0; state_dim + constraints];
                vec![vec![0.0; quadratic_features(&z).len()]]
            }
            CriticKind::Structured => {
                vec![vec![0.0; quadratic_features(&x).len()]; constraints + 1]
            }
        };
        PolyCritic { kind, constraints, weights }
    }

    pub fn kind(&self) -> CriticKind {
        self.kind
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn features(&self, head: usize, x: &[f64], lambda: &[f64]) -> Vec<f64> {
        match (self.kind, head) {
            (CriticKind::InputAugmented, _) => {
                let z: Vec<f64> = x.iter().chain(lambda).copied().collect();
                quadratic_features(&z)
            }
            _ => quadratic_features(x),
        }
    }

    pub fn heads(&self, x: &[f64], lambda: &[f64]) -> Vec<f64> {
        (0..self.weights.len()).map(|h| dot(&self.weights[h], &self.features(h, x, lambda))).collect()
    }

    pub fn value(&self, x: &[f64], lambda: &[f64]) -> f64 {
        let heads = self.heads(x, lambda);
        match self.kind {
            CriticKind::Structured => heads[0] - dot(lambda, &heads[1..]),
            _ => heads[0],
        }
    }

    /// One-step TD error of the combined value on the penalized reward
    /// `r - lambda^T c`.
    pub fn td_error(&self, x: &[f64], next: &[f64], reward: f64, c: &[f64], lambda: &[f64], gamma: f64) -> f64 {
        reward - dot(lambda, c) + gamma * self.value(next, lambda) - self.value(x, lambda)
    }

    /// Adds the semi-gradient TD direction of one transition into `dir`
    /// (same layout as the weights). Each head regresses on its own signal.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_td_direction(
        &self,
        x: &[f64],
        next: &[f64],
        reward: f64,
        c: &[f64],
        lambda: &[f64],
        gamma: f64,
        dir: &mut [Vec<f64>],
    ) {
        let now = self.heads(x, lambda);
        let after = self.heads(next, lambda);
        for h in 0..self.weights.len() {
            let signal = match (self.kind, h) {
                (CriticKind::Structured, 0) => reward,
                (CriticKind::Structured, j) => c[j - 1],
                _ => reward - dot(lambda, c),
            };
            let delta = signal + gamma * after[h] - now[h];
            for (d, f) in dir[h].iter_mut().zip(self.features(h, x, lambda)) {
                *d += delta * f;
            }
        }
    }

    pub fn apply(&mut self, dir: &[Vec<f64>], step: f64) {
        for (w, d) in self.weights.iter_mut().zip(dir) {
            for (wi, di) in w.iter_mut().zip(d) {
                *wi += step * di;
            }
        }
    }

    pub fn zero_direction(&self) -> Vec<Vec<f64>> {
        self.weights.iter().map(|w| vec![0.0; w.len()]).collect()
    }

    pub fn constraints(&self) -> usize {
        self.constraints
    }
}
