//! Policy evaluation on the LQ testbed with three critic structures trained
//! by semi-gradient TD(0) on the same transitions, compared by mean square
//! TD error on held-out episodes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::write_file;
use crate::cmaa2c::{stream_rng, STREAM_EVAL, STREAM_INIT, STREAM_TRAIN};
use crate::critics::{mstde_gap_prediction, CriticKind, PolyCritic};
use crate::env::{LqConfig, LqEpisode, LqPolicyEvalEnv};
use crate::error::{Error, Result};
use crate::risk::episode_weights;

/// MSTDE above this aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub const KINDS: [CriticKind; 3] = [CriticKind::Generic, CriticKind::InputAugmented, CriticKind::Structured];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyEvalConfig {
    pub gamma: f64,
    /// Transitions per episode.
    pub horizon: usize,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub epochs: usize,
    /// Step size in epoch 0; epoch `k` uses `lr / (1 + lr_decay * k)`.
    pub lr: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for PolicyEvalConfig {
    fn default() -> Self {
        PolicyEvalConfig {
            gamma: 0.9,
            horizon: 25,
            train_episodes: 400,
            test_episodes: 4000,
            epochs: 150,
            lr: 0.05,
            lr_decay: 0.1,
            seed: 0,
        }
    }
}

impl PolicyEvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("policy_eval.{m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.horizon < 1 || self.train_episodes < 1 || self.test_episodes < 2 {
            return bad("horizon and train_episodes must be positive, test_episodes at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay >= 0.0) {
            return bad("lr must be positive and lr_decay nonnegative");
        }
        Ok(())
    }
}

/// The policy-evaluation config file: `[policy_eval]` and `[environments]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyEvalFile {
    pub policy_eval: PolicyEvalConfig,
    pub environments: LqConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvalOutcome {
    /// Test MSTDE per epoch (row 0 is before training), columns in
    /// generic, input-augmented, structured order.
    pub mstde: Vec<[f64; 3]>,
    pub c_mean: Vec<f64>,
    pub c_cov: Vec<Vec<f64>>,
    pub lambda_cov: Vec<Vec<f64>>,
    pub predicted_gap: f64,
    /// Final generic minus structured MSTDE.
    pub gap: f64,
    /// Standard error of `gap` from paired per-episode differences.
    pub gap_se: f64,
}

struct Sample<'a> {
    x: &'a [f64],
    next: &'a [f64],
    reward: f64,
    c: &'a [f64],
    lambda: &'a [f64],
}

struct Episode {
    lambda: Vec<f64>,
    states: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    constraints: Vec<Vec<f64>>,
}

impl From<LqEpisode> for Episode {
    fn from(e: LqEpisode) -> Self {
        Episode {
            lambda: e.lambda,
            states: e.states.iter().map(|s| s.iter().copied().collect()).collect(),
            rewards: e.rewards,
            constraints: e.constraints,
        }
    }
}

impl Episode {
    fn sample(&self, t: usize) -> Sample<'_> {
        Sample {
            x: &self.states[t],
            next: &self.states[t + 1],
            reward: self.rewards[t],
            c: &self.constraints[t],
            lambda: &self.lambda,
        }
    }
}

/// Per-episode weighted MSTDE `sum_t w_t delta_t^2` over transitions `t < T`.
fn episode_mstde(critic: &PolyCritic, ep: &Episode, weights: &[f64], gamma: f64) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(t, w)| {
            let s = ep.sample(t);
            w * critic.td_error(s.x, s.next, s.reward, s.c, s.lambda, gamma).powi(2)
        })
        .sum()
}

/// Weighted mean and covariance of the constraint over test transitions.
fn constraint_moments(test: &[Episode], weights: &[f64], m: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = test.len() as f64;
    let mut mean = DVector::zeros(m);
    for ep in test {
        for (t, w) in weights.iter().enumerate() {
            mean += DVector::from_column_slice(&ep.constraints[t]) * (w / n);
        }
    }
    let mut cov = DMatrix::zeros(m, m);
    for ep in test {
        for (t, w) in weights.iter().enumerate() {
            let d = DVector::from_column_slice(&ep.constraints[t]) - &mean;
            cov += &d * d.transpose() * (w / n);
        }
    }
    (mean, cov)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Trains the three critics and writes `fig5.csv` plus `fig5_summary.json`
/// into `out` when given.
pub fn fig5_policy_eval(file: &PolicyEvalFile, out: Option<&Path>) -> Result<PolicyEvalOutcome> {
    let cfg = &file.policy_eval;
    cfg.validate()?;
    let env = LqPolicyEvalEnv::new(&file.environments)?;
    let (n, m) = (env.state_dim(), env.constraint_dim());
    let mut train_rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let train: Vec<Episode> =
        (0..cfg.train_episodes).map(|_| env.rollout(cfg.horizon, &mut train_rng).into()).collect();
    let mut test_rng = stream_rng(cfg.seed, STREAM_EVAL);
    let test: Vec<Episode> = (0..cfg.test_episodes).map(|_| env.rollout(cfg.horizon, &mut test_rng).into()).collect();
    let weights = episode_weights(cfg.horizon, cfg.gamma);

    let mut critics: Vec<PolyCritic> = KINDS.iter().map(|&k| PolyCritic::new(k, n, m)).collect();
    let measure = |critics: &[PolyCritic]| -> [Vec<f64>; 3] {
        std::array::from_fn(|i| test.iter().map(|ep| episode_mstde(&critics[i], ep, &weights, cfg.gamma)).collect())
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mut order: Vec<(usize, usize)> = (0..train.len()).flat_map(|e| (0..cfg.horizon).map(move |t| (e, t))).collect();
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut last = measure(&critics);
    curve.push([mean(&last[0]), mean(&last[1]), mean(&last[2])]);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let step = cfg.lr / (1.0 + cfg.lr_decay * epoch as f64);
        for critic in critics.iter_mut() {
            for &(e, t) in &order {
                let s = train[e].sample(t);
                let mut dir = critic.zero_direction();
                critic.accumulate_td_direction(s.x, s.next, s.reward, s.c, s.lambda, cfg.gamma, &mut dir);
                critic.apply(&dir, step);
            }
        }
        last = measure(&critics);
        let row = [mean(&last[0]), mean(&last[1]), mean(&last[2])];
        if let Some(i) = row.iter().position(|v| !(v.is_finite() && *v <= DIVERGENCE_LIMIT)) {
            return Err(Error::Aborted {
                episode: epoch + 1,
                reason: format!(
                    "{} critic MSTDE {} exceeds {DIVERGENCE_LIMIT} (step size {step}, weights {:?})",
                    KINDS[i].name(),
                    row[i],
                    critics[i].weights()
                ),
            });
        }
        curve.push(row);
    }

    let (c_mean, c_cov) = constraint_moments(&test, &weights, m);
    let lambda_cov = DMatrix::from_fn(m, m, |i, j| file.environments.lambda_cov[i][j]);
    let predicted_gap = mstde_gap_prediction(&c_mean, &c_cov, &lambda_cov)?;
    let diffs: Vec<f64> = last[0].iter().zip(&last[2]).map(|(g, s)| g - s).collect();
    let gap = mean(&diffs);
    let var = diffs.iter().map(|d| (d - gap).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    let outcome = PolicyEvalOutcome {
        mstde: curve,
        c_mean: c_mean.iter().copied().collect(),
        c_cov: to_rows(&c_cov),
        lambda_cov: to_rows(&lambda_cov),
        predicted_gap,
        gap,
        gap_se: (var / diffs.len() as f64).sqrt(),
    };
    if let Some(dir) = out {
        let mut csv = String::from("epoch,mstde_gc,mstde_iac,mstde_sc,predicted_gap\n");
        for (k, r) in outcome.mstde.iter().enumerate() {
            csv.push_str(&format!("{k},{},{},{},{}\n", r[0], r[1], r[2], predicted_gap));
        }
        write_file(&dir.join("fig5.csv"), &csv)?;
        let json = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
        write_file(&dir.join("fig5_summary.json"), &json)?;
    }
    Ok(outcome)
}
