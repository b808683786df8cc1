use serde::{Deserialize, Serialize};

use crate::critics::CriticKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient steps, mainly for first-order checks.
    Sgd,
}

/// Learner hyperparameters. Defaults follow the published table; the
/// robustness switches at the bottom are all off by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub dual_lr: f64,
    /// n-step return horizon.
    pub kappa: usize,
    pub lambda_max: f64,
    pub lambda_init: f64,
    /// Number of training episodes `K`.
    pub episodes: usize,
    pub seed: u64,
    pub critic: CriticKind,
    /// Episodes between target-network copies.
    pub target_interval: usize,
    pub optimizer: OptimizerKind,
    /// Episodes between evaluation snapshots (and after the last episode).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Episodes between checkpoints; 0 keeps only the first and the last.
    pub checkpoint_interval: usize,
    pub entropy_coef: f64,
    /// Gradient-norm clip per update; 0 disables clipping.
    pub grad_clip: f64,
    /// Divide rewards by a running standard deviation.
    pub normalize_rewards: bool,
    /// Episodes per parameter and dual update.
    pub episodes_per_update: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            dual_lr: 1e-4,
            kappa: 5,
            lambda_max: 10.0,
            lambda_init: 0.0,
            episodes: 8000,
            seed: 0,
            critic: CriticKind::Structured,
            target_interval: 200,
            optimizer: OptimizerKind::Adam,
            eval_interval: 200,
            eval_episodes: 50,
            checkpoint_interval: 0,
            entropy_coef: 0.0,
            grad_clip: 0.0,
            normalize_rewards: false,
            episodes_per_update: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("cmaa2c.{msg}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if [self.actor_lr, self.critic_lr, self.dual_lr].iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("learning rates must be positive and finite");
        }
        if self.kappa < 1 {
            return bad("kappa must be at least 1");
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return bad("lambda_max must be positive");
        }
        if !(0.0..=self.lambda_max).contains(&self.lambda_init) {
            return bad("lambda_init must lie in [0, lambda_max]");
        }
        if self.target_interval < 1 || self.episodes_per_update < 1 {
            return bad("target_interval and episodes_per_update must be at least 1");
        }
        if self.eval_interval < 1 || self.eval_episodes < 1 {
            return bad("eval_interval and eval_episodes must be at least 1");
        }
        if !(self.entropy_coef >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("entropy_coef and grad_clip must be nonnegative");
        }
        Ok(())
    }
}
