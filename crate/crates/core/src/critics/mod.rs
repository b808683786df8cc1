//! Value critics for the primal-dual learner.
//!
//! Three variants share one network type. The generic critic sees the
//! global state only, the input-augmented critic sees the state with the
//! dual variables appended, and the structured critic predicts one reward
//! head plus `m` constraint heads and combines them as `V_R - lambda^T V_C`.

mod poly;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, Mlp, ParamGrad};

pub use poly::{quadratic_features, PolyCritic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    Generic,
    InputAugmented,
    Structured,
}

impl CriticKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticKind::Generic => "generic",
            CriticKind::InputAugmented => "input_augmented",
            CriticKind::Structured => "structured",
        }
    }

    /// Short label used in suite directory names.
    pub fn short(self) -> &'static str {
        match self {
            CriticKind::Generic => "gc",
            CriticKind::InputAugmented => "iac",
            CriticKind::Structured => "sc",
        }
    }

    /// Width of the value and target vectors for `m` constraints.
    pub fn width(self, constraints: usize) -> usize {
        match self {
            CriticKind::Structured => constraints + 1,
            _ => 1,
        }
    }
}

/// `eta = [1, -lambda^T]^T`.
pub fn eta(lambda: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(lambda.iter().map(|l| -l)).collect()
}

/// The per-step learning signal for a critic of the given kind: the
/// `(m+1)`-vector `[r, c^T]` for the structured critic, the penalized
/// scalar `r - lambda^T c` otherwise.
pub fn signal(kind: CriticKind, reward: f64, c: &[f64], lambda: &[f64]) -> Vec<f64> {
    match kind {
        CriticKind::Structured => std::iter::once(reward).chain(c.iter().copied()).collect(),
        _ => vec![reward - dot(lambda, c)],
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    kind: CriticKind,
    constraints: usize,
    net: Mlp,
}

impl Critic {
    /// ReLU MLP with the given hidden widths and a linear output layer.
    pub fn new<R: Rng + ?Sized>(
        kind: CriticKind,
        state_dim: usize,
        constraints: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let input = match kind {
            CriticKind::InputAugmented => state_dim + constraints,
            _ => state_dim,
        };
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(kind.width(constraints));
        Ok(Critic { kind, constraints, net: Mlp::new(&sizes, rng)? })
    }

    pub fn from_net(kind: CriticKind, constraints: usize, net: Mlp) -> Result<Self> {
        check_dim("critic output", kind.width(constraints), net.output_dim())?;
        if kind == CriticKind::InputAugmented && net.input_dim() <= constraints {
            return Err(Error::InvalidInput(
                "input-augmented critic needs room for the state and the dual variables".into(),
            ));
        }
        Ok(Critic { kind, constraints, net })
    }

    pub fn kind(&self) -> CriticKind {
        self.kind
    }

    pub fn constraints(&self) -> usize {
        self.constraints
    }

    pub fn width(&self) -> usize {
        self.kind.width(self.constraints)
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            CriticKind::InputAugmented => self.net.input_dim() - self.constraints,
            _ => self.net.input_dim(),
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn input(&self, x: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        check_dim("critic state", self.state_dim(), x.len())?;
        check_dim("dual variables", self.constraints, lambda.len())?;
        Ok(match self.kind {
            CriticKind::InputAugmented => x.iter().chain(lambda).copied().collect(),
            _ => x.to_vec(),
        })
    }

    /// Raw network outputs: `[V_R, V_C^T]` for the structured critic, `[V]` otherwise.
    pub fn heads(&self, x: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.input(x, lambda)?)
    }

    /// Scalar value estimate `V(x, lambda)` for any variant.
    pub fn scalar_value(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        let heads = self.heads(x, lambda)?;
        Ok(match self.kind {
            CriticKind::Structured => heads[0] - dot(lambda, &heads[1..]),
            _ => heads[0],
        })
    }

    /// `head_0(x) - lambda^T heads_1..m(x)`; only defined for the structured variant.
    pub fn structured_value(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        if self.kind != CriticKind::Structured {
            return Err(Error::InvalidInput(format!("structured value requested from a {} critic", self.kind.name())));
        }
        self.scalar_value(x, lambda)
    }
}

/// Builds a critic network shape for checkpoint loading.
pub fn critic_shapes(
    kind: CriticKind,
    state_dim: usize,
    constraints: usize,
    hidden: &[usize],
) -> Vec<(usize, usize, Activation)> {
    let mut input = match kind {
        CriticKind::InputAugmented => state_dim + constraints,
        _ => state_dim,
    };
    let mut shapes = Vec::with_capacity(hidden.len() + 1);
    for &h in hidden {
        shapes.push((input, h, Activation::Relu));
        input = h;
    }
    shapes.push((input, kind.width(constraints), Activation::Linear));
    shapes
}

/// n-step targets `D_t = sum_{n=t}^{N-1} g^(n-t) d_n + g^(N-t) V(x_N)` with
/// `N = min(T, t + kappa)`, for `t = 0..=T` where `T = values.len() - 1`.
///
/// `signals[t]` is `d_t` (at least `T` entries) and `values[t]` the bootstrap
/// value at `x_t`; both carry the same width. Computed from discounted
/// suffix sums so each target costs O(width).
pub fn nstep_returns(signals: &[Vec<f64>], values: &[Vec<f64>], gamma: f64, kappa: usize) -> Result<Vec<Vec<f64>>> {
    if kappa < 1 {
        return Err(Error::Config("n-step horizon kappa must be at least 1".into()));
    }
    let Some(horizon) = values.len().checked_sub(1) else {
        return Ok(Vec::new());
    };
    if signals.len() < horizon {
        return Err(Error::Dimension { context: "n-step signals", expected: horizon, actual: signals.len() });
    }
    let width = values[0].len();
    for row in signals[..horizon].iter().chain(values) {
        check_dim("n-step width", width, row.len())?;
    }

    // suffix[t] = sum_{n=t}^{T-1} g^(n-t) d_n
    let mut suffix = vec![vec![0.0; width]; horizon + 1];
    for t in (0..horizon).rev() {
        for k in 0..width {
            suffix[t][k] = signals[t][k] + gamma * suffix[t + 1][k];
        }
    }
    let reach = kappa.min(horizon);
    let mut powers = vec![1.0; reach + 1];
    for n in 1..=reach {
        powers[n] = powers[n - 1] * gamma;
    }
    Ok((0..=horizon)
        .map(|t| {
            let n = horizon.min(t + kappa);
            let g = powers[n - t];
            (0..width).map(|k| suffix[t][k] - g * (suffix[n][k] - values[n][k])).collect()
        })
        .collect())
}

/// `A_t = eta^T (D_t - V(x_t))`; scalar critics use `D_t - V(x_t)`.
pub fn advantage(target: &[f64], value: &[f64], eta: &[f64]) -> f64 {
    if target.len() == 1 {
        target[0] - value[0]
    } else {
        target.iter().zip(value).zip(eta).map(|((d, v), e)| e * (d - v)).sum()
    }
}

/// `sum_t ||D_t - V(x_t)||^2` and its parameter gradient, with targets held
/// constant.
pub fn critic_loss_and_grad(
    critic: &Critic,
    states: &[Vec<f64>],
    lambda: &[f64],
    targets: &[Vec<f64>],
) -> Result<(f64, ParamGrad)> {
    check_dim("critic targets", states.len(), targets.len())?;
    let net = critic.net();
    let mut grad = ParamGrad::zeros(net.param_count());
    let mut loss = 0.0;
    for (x, target) in states.iter().zip(targets) {
        check_dim("critic target width", critic.width(), target.len())?;
        let cache = net.forward_cached(&critic.input(x, lambda)?)?;
        let out = cache.output();
        let residual: Vec<f64> = out.iter().zip(target).map(|(v, d)| v - d).collect();
        loss += residual.iter().map(|r| r * r).sum::<f64>();
        let out_grad: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
        net.backward_accumulate(&cache, &out_grad, &mut grad)?;
    }
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    Ok((loss, grad))
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!("{name} must be square")));
    }
    let scale = m.abs().max().max(1.0);
    if (m - m.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::InvalidInput(format!("{name} must be symmetric")));
    }
    Ok(())
}

/// Predicted reduction in mean square TD error from a structured critic
/// when the dual variables fluctuate: `Tr[S_lambda (S_C + c c^T)]`.
pub fn mstde_gap_prediction(c_mean: &DVector<f64>, c_cov: &DMatrix<f64>, lambda_cov: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(c_cov, "constraint covariance")?;
    check_symmetric(lambda_cov, "dual-variable covariance")?;
    let m = c_mean.len();
    check_dim("constraint covariance", m, c_cov.nrows())?;
    check_dim("dual-variable covariance", m, lambda_cov.nrows())?;
    let second = c_cov + c_mean * c_mean.transpose();
    Ok((lambda_cov * second).trace())
}
