use rand::Rng;

use super::mlp::{Mlp, ParamGrad};
use crate::error::{Error, Result};

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// A discrete-action policy: an MLP emitting one logit per action.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    net: Mlp,
}

impl CategoricalPolicy {
    pub fn new(net: Mlp) -> Self {
        CategoricalPolicy { net }
    }

    pub fn with_architecture<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(actions);
        Ok(CategoricalPolicy::new(Mlp::new(&sizes, rng)?))
    }

    /// A policy that always picks `action`, up to a probability deficit far
    /// below double precision.
    pub fn pinned(obs_dim: usize, actions: usize, action: usize) -> Result<Self> {
        if action >= actions {
            return Err(Error::InvalidInput(format!("pinned action {action} out of range for {actions} actions")));
        }
        let mut net = Mlp::zeros(&[obs_dim, actions])?;
        for (k, b) in net.bias_mut(0).iter_mut().enumerate() {
            *b = if k == action { 50.0 } else { -50.0 };
        }
        Ok(CategoricalPolicy { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn action_count(&self) -> usize {
        self.net.output_dim()
    }

    pub fn logits(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(obs)
    }

    pub fn probabilities(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(obs)?))
    }

    /// Draws an action by inverse-CDF sampling; returns it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(usize, f64)> {
        let logits = self.logits(obs)?;
        let probs = softmax(&logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                action = k;
                break;
            }
        }
        Ok((action, log_softmax(&logits)[action]))
    }

    pub fn log_prob(&self, obs: &[f64], action: usize) -> Result<f64> {
        self.check_action(action)?;
        Ok(log_softmax(&self.logits(obs)?)[action])
    }

    /// Gradient of `log pi(action | obs)` with respect to the policy parameters.
    pub fn log_prob_grad(&self, obs: &[f64], action: usize) -> Result<ParamGrad> {
        let mut grad = ParamGrad::zeros(self.net.param_count());
        self.accumulate_log_prob_grad(obs, action, 1.0, 0.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `weight * grad log pi(action|obs) + entropy_weight * grad H(pi(.|obs))`
    /// into `grad`. Returns `(log pi(action|obs), H)`.
    pub fn accumulate_log_prob_grad(
        &self,
        obs: &[f64],
        action: usize,
        weight: f64,
        entropy_weight: f64,
        grad: &mut ParamGrad,
    ) -> Result<(f64, f64)> {
        self.check_action(action)?;
        let cache = self.net.forward_cached(obs)?;
        let logp = log_softmax(cache.output());
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy = -probs.iter().zip(&logp).map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 }).sum::<f64>();
        let logit_grad: Vec<f64> = probs
            .iter()
            .zip(&logp)
            .enumerate()
            .map(|(k, (&p, &l))| {
                let onehot = if k == action { 1.0 } else { 0.0 };
                let dlogp = onehot - p;
                // dH/dz_k = -p_k (log p_k + H)
                let dh = -p * (l + entropy);
                weight * dlogp + entropy_weight * dh
            })
            .collect();
        self.net.backward_accumulate(&cache, &logit_grad, grad)?;
        Ok((logp[action], entropy))
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action < self.action_count() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("action {action} out of range for {} actions", self.action_count())))
        }
    }
}
