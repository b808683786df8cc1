//! Penalty transforms and discounted risk estimators.
//!
//! The primal-dual loop enforces `E[G c_t] <= 0` on whatever signal it is
//! fed. Feeding `I[c >= alpha] - delta` bounds the violation probability
//! under the occupation measure by `delta`; feeding `[c - alpha]_+ - delta`
//! bounds `CVaR_beta` by `alpha + delta / (1 - beta)`.
//!
//! Risk estimates are computed on a weighted empirical occupation measure:
//! state `x_t` of an episode of length `T + 1` carries weight
//! `g^t (1 - g) / (1 - g^(T+1))`, and episodes are averaged uniformly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMetric {
    Average,
    Chance,
    Cvar,
}

impl RiskMetric {
    pub fn name(self) -> &'static str {
        match self {
            RiskMetric::Average => "average",
            RiskMetric::Chance => "chance",
            RiskMetric::Cvar => "cvar",
        }
    }
}

/// Risk-metric selector with its tolerances. `alpha` also serves as the
/// reporting threshold for average-metric runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub metric: RiskMetric,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub beta: f64,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec::average(0.1)
    }
}

impl PenaltySpec {
    pub fn average(report_alpha: f64) -> Self {
        PenaltySpec { metric: RiskMetric::Average, alpha: vec![report_alpha], delta: vec![0.0], beta: 0.9 }
    }

    /// Tolerances used for the chance-constrained runs: `alpha = delta = 0.1`.
    pub fn chance() -> Self {
        PenaltySpec { metric: RiskMetric::Chance, alpha: vec![0.1], delta: vec![0.1], beta: 0.9 }
    }

    /// Tolerances used for the CVaR runs: `alpha = 0.2`, `delta = 5e-3`, `beta = 0.9`.
    pub fn cvar() -> Self {
        PenaltySpec { metric: RiskMetric::Cvar, alpha: vec![0.2], delta: vec![5e-3], beta: 0.9 }
    }

    pub fn constraints(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.delta.len() {
            return Err(Error::Config("risk: alpha and delta need one entry per constraint".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("risk.beta = {} outside (0, 1)", self.beta)));
        }
        if self.alpha.iter().chain(&self.delta).any(|v| !v.is_finite()) {
            return Err(Error::Config("risk: tolerances must be finite".into()));
        }
        match self.metric {
            RiskMetric::Chance if self.delta.iter().any(|d| !(0.0..=1.0).contains(d)) => {
                Err(Error::Config("risk: chance tolerance delta must lie in [0, 1]".into()))
            }
            RiskMetric::Cvar if self.alpha.iter().chain(&self.delta).any(|&v| v < 0.0) => {
                Err(Error::Config("risk: cvar tolerances alpha and delta must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Maps raw constraint evaluations to the penalty signal for `spec.metric`.
pub fn transform_penalty(c_raw: &[f64], spec: &PenaltySpec) -> Vec<f64> {
    match spec.metric {
        RiskMetric::Average => c_raw.to_vec(),
        RiskMetric::Chance => c_raw
            .iter()
            .zip(spec.alpha.iter().zip(&spec.delta))
            .map(|(&c, (&a, &d))| if c >= a { 1.0 - d } else { -d })
            .collect(),
        RiskMetric::Cvar => {
            c_raw.iter().zip(spec.alpha.iter().zip(&spec.delta)).map(|(&c, (&a, &d))| (c - a).max(0.0) - d).collect()
        }
    }
}

/// Joint violation test: true only when every component reaches its tolerance.
pub fn joint_violation(c: &[f64], alpha: &[f64]) -> bool {
    c.iter().zip(alpha).all(|(c, a)| c >= a)
}

/// Aggregate chance channel `I[C(x) >= alpha] - delta` over all components.
pub fn joint_chance_signal(c: &[f64], alpha: &[f64], delta: f64) -> f64 {
    if joint_violation(c, alpha) {
        1.0 - delta
    } else {
        -delta
    }
}

pub fn cvar_upper_bound(alpha: &[f64], delta: &[f64], beta: f64) -> Vec<f64> {
    alpha.iter().zip(delta).map(|(a, d)| a + d / (1.0 - beta)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub value: f64,
    pub weight: f64,
}

/// Discount weights of states `x_0..x_{len-1}` within one episode; they sum to one.
pub fn episode_weights(len: usize, gamma: f64) -> Vec<f64> {
    let norm = (1.0 - gamma) / (1.0 - gamma.powi(len as i32));
    let mut w = norm;
    (0..len)
        .map(|_| {
            let out = w;
            w *= gamma;
            out
        })
        .collect()
}

/// Weighted empirical occupation measure over episodes of per-state values.
pub fn discounted_samples(episodes: &[Vec<f64>], gamma: f64) -> Vec<WeightedSample> {
    let n = episodes.len() as f64;
    episodes
        .iter()
        .flat_map(|ep| {
            episode_weights(ep.len(), gamma)
                .into_iter()
                .zip(ep)
                .map(move |(w, &value)| WeightedSample { value, weight: w / n })
        })
        .collect()
}

fn normalized(samples: &[WeightedSample]) -> Result<Vec<WeightedSample>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    if samples.iter().any(|s| !s.value.is_finite() || !(s.weight >= 0.0)) {
        return Err(Error::InvalidInput("samples need finite values and nonnegative weights".into()));
    }
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("total sample weight is zero".into()));
    }
    Ok(samples.iter().map(|s| WeightedSample { value: s.value, weight: s.weight / total }).collect())
}

fn sorted_normalized(samples: &[WeightedSample]) -> Result<Vec<WeightedSample>> {
    let mut sorted = normalized(samples)?;
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(sorted)
}

fn f_normalized(samples: &[WeightedSample], beta: f64, alpha: f64) -> f64 {
    let excess: f64 = samples.iter().map(|s| s.weight * (s.value - alpha).max(0.0)).sum();
    alpha + excess / (1.0 - beta)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("risk level {beta} outside (0, 1)")))
    }
}

/// Weighted lower `beta`-quantile: the smallest sample value whose
/// cumulative weight reaches `beta`.
pub fn empirical_var(samples: &[WeightedSample], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let sorted = sorted_normalized(samples)?;
    let mut acc = 0.0;
    for s in &sorted {
        acc += s.weight;
        if acc >= beta - WEIGHT_TOL {
            return Ok(s.value);
        }
    }
    Ok(sorted.last().unwrap().value)
}

/// Mean of the upper tail of mass `1 - beta`, splitting the atom at the
/// quantile so the tail mass is exact. Equals `VaR + E[(c - VaR)_+] / (1 - beta)`.
pub fn empirical_cvar(samples: &[WeightedSample], beta: f64) -> Result<f64> {
    let var = empirical_var(samples, beta)?;
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let excess: f64 = samples.iter().map(|s| s.weight * (s.value - var).max(0.0)).sum::<f64>() / total;
    Ok(var + excess / (1.0 - beta))
}

pub fn empirical_violation_probability(samples: &[WeightedSample], alpha: f64) -> Result<f64> {
    Ok(normalized(samples)?.iter().filter(|s| s.value >= alpha).map(|s| s.weight).sum())
}

/// Rockafellar-Uryasev objective `F(a) = a + E[(c - a)_+] / (1 - beta)`.
pub fn f_alpha(samples: &[WeightedSample], beta: f64, alpha: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(f_normalized(&normalized(samples)?, beta, alpha))
}

pub fn f_alpha_curve(samples: &[WeightedSample], beta: f64, alpha_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_beta(beta)?;
    let samples = normalized(samples)?;
    Ok(alpha_grid.iter().map(|&a| (a, f_normalized(&samples, beta, a))).collect())
}

/// One evaluation snapshot, serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub metric: RiskMetric,
    pub beta: f64,
    pub alpha: f64,
    pub delta: f64,
    pub var: f64,
    pub cvar: f64,
    /// Measured bound `F(alpha) = alpha + E[(C - alpha)_+] / (1 - beta)`.
    pub cvar_ub: f64,
    pub prob_violation: f64,
    pub n_episodes: usize,
}

impl RiskReport {
    /// Builds the report for constraint channel `j` from raw per-state values.
    pub fn from_episodes(episodes: &[Vec<f64>], gamma: f64, spec: &PenaltySpec, j: usize) -> Result<Self> {
        let samples = discounted_samples(episodes, gamma);
        let alpha = spec.alpha[j];
        Ok(RiskReport {
            metric: spec.metric,
            beta: spec.beta,
            alpha,
            delta: spec.delta[j],
            var: empirical_var(&samples, spec.beta)?,
            cvar: empirical_cvar(&samples, spec.beta)?,
            cvar_ub: f_alpha(&samples, spec.beta, alpha)?,
            prob_violation: empirical_violation_probability(&samples, alpha)?,
            n_episodes: episodes.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn equal(values: &[f64]) -> Vec<WeightedSample> {
        let w = 1.0 / values.len() as f64;
        values.iter().map(|&value| WeightedSample { value, weight: w }).collect()
    }

    fn spec(metric: RiskMetric, alpha: f64, delta: f64) -> PenaltySpec {
        PenaltySpec { metric, alpha: vec![alpha], delta: vec![delta], beta: 0.9 }
    }

    #[test]
    fn transform_examples() {
        let chance = spec(RiskMetric::Chance, 0.1, 0.1);
        assert!((transform_penalty(&[0.5], &chance)[0] - 0.9).abs() < 1e-15);
        assert!((transform_penalty(&[0.0], &chance)[0] + 0.1).abs() < 1e-15);
        let cvar = spec(RiskMetric::Cvar, 0.2, 0.005);
        assert!((transform_penalty(&[0.5], &cvar)[0] - 0.295).abs() < 1e-12);
        let avg = spec(RiskMetric::Average, 0.0, 0.0);
        assert_eq!(transform_penalty(&[-3.5, 2.0], &avg), vec![-3.5, 2.0]);
    }

    #[test]
    fn chance_threshold_is_inclusive() {
        let chance = spec(RiskMetric::Chance, 0.1, 0.25);
        assert_eq!(transform_penalty(&[0.1], &chance), vec![0.75]);
    }

    #[test]
    fn validation_rules() {
        assert!(spec(RiskMetric::Chance, 0.1, 1.5).validate().is_err());
        assert!(spec(RiskMetric::Cvar, -0.1, 0.0).validate().is_err());
        assert!(spec(RiskMetric::Average, -3.0, 0.0).validate().is_ok());
        let mut bad_beta = PenaltySpec::cvar();
        bad_beta.beta = 1.0;
        assert!(bad_beta.validate().is_err());
    }

    #[test]
    fn discrete_quantile() {
        let s = equal(&(1..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(empirical_var(&s, 0.9).unwrap(), 9.0);
        assert_eq!(empirical_var(&s, 0.05).unwrap(), 1.0);
        assert!((empirical_cvar(&s, 0.9).unwrap() - 10.0).abs() < 1e-12);
        // tail of mass 0.2 = {9, 10}
        assert!((empirical_cvar(&s, 0.8).unwrap() - 9.5).abs() < 1e-12);
        // tail of mass 0.15 splits the atom at 9 in half
        let expected = (0.1 * 10.0 + 0.05 * 9.0) / 0.15;
        assert!((empirical_cvar(&s, 0.85).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_samples() {
        let s = equal(&[2.5; 7]);
        for beta in [0.01, 0.5, 0.9, 0.999] {
            assert_eq!(empirical_var(&s, beta).unwrap(), 2.5);
            assert!((empirical_cvar(&s, beta).unwrap() - 2.5).abs() < 1e-12);
        }
        let curve = f_alpha_curve(&s, 0.9, &[2.0, 2.5, 3.0]).unwrap();
        assert!((curve[1].1 - 2.5).abs() < 1e-12);
        assert!(curve[0].1 > curve[1].1 && curve[2].1 > curve[1].1);
    }

    #[test]
    fn empty_samples_are_errors() {
        assert!(empirical_var(&[], 0.9).is_err());
        assert!(empirical_cvar(&[], 0.9).is_err());
        assert!(empirical_violation_probability(&[], 0.1).is_err());
    }

    #[test]
    fn violation_probability_extremes() {
        let s = equal(&[-1.0, -0.5, 0.0]);
        assert_eq!(empirical_violation_probability(&s, 0.1).unwrap(), 0.0);
        let s = equal(&[0.2, 0.5, 3.0]);
        assert!((empirical_violation_probability(&s, 0.1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_examples() {
        assert!((cvar_upper_bound(&[0.2], &[0.005], 0.9)[0] - 0.25).abs() < 1e-12);
        assert_eq!(cvar_upper_bound(&[0.7], &[0.0], 0.9), vec![0.7]);
        assert!((cvar_upper_bound(&[0.2], &[0.005], 1e-12)[0] - 0.205).abs() < 1e-9);
    }

    #[test]
    fn episode_weights_sum_to_one() {
        for (len, g) in [(26, 0.99), (1, 0.5), (100, 0.9)] {
            let w = episode_weights(len, g);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let samples = discounted_samples(&[vec![1.0; 5], vec![2.0; 9]], 0.9);
        assert!((samples.iter().map(|s| s.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_channel_requires_every_component() {
        assert!(joint_violation(&[0.5, 0.3], &[0.1, 0.1]));
        assert!(!joint_violation(&[0.5, 0.0], &[0.1, 0.1]));
        assert_eq!(joint_chance_signal(&[0.5, 0.0], &[0.1, 0.1], 0.1), -0.1);
    }

    proptest! {
        #[test]
        fn cvar_dominates_var_and_is_monotone(
            values in prop::collection::vec(-5.0f64..5.0, 1..40),
            weights in prop::collection::vec(0.01f64..1.0, 40),
            b1 in 0.01f64..0.99,
            b2 in 0.01f64..0.99,
        ) {
            let samples: Vec<WeightedSample> = values.iter().zip(&weights)
                .map(|(&value, &weight)| WeightedSample { value, weight }).collect();
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let (var_lo, var_hi) = (empirical_var(&samples, lo).unwrap(), empirical_var(&samples, hi).unwrap());
            let (cvar_lo, cvar_hi) = (empirical_cvar(&samples, lo).unwrap(), empirical_cvar(&samples, hi).unwrap());
            prop_assert!(cvar_lo >= var_lo - 1e-12);
            prop_assert!(cvar_hi >= var_hi - 1e-12);
            prop_assert!(var_hi >= var_lo);
            prop_assert!(cvar_hi >= cvar_lo - 1e-9);
            // F upper-bounds CVaR everywhere and attains it at the VaR
            let f_at_var = f_alpha(&samples, hi, var_hi).unwrap();
            prop_assert!((f_at_var - cvar_hi).abs() < 1e-9);
            for a in [-6.0, -1.0, 0.0, 0.5, 2.0, 6.0] {
                prop_assert!(f_alpha(&samples, hi, a).unwrap() >= cvar_hi - 1e-9);
            }
        }

        #[test]
        fn transform_ranges(c in -10.0f64..10.0, c2 in -10.0f64..10.0, a in 0.0f64..2.0, d in 0.0f64..1.0) {
            let chance = spec(RiskMetric::Chance, a, d);
            let v = transform_penalty(&[c], &chance)[0];
            prop_assert!(v == -d || v == 1.0 - d);
            let cvar = spec(RiskMetric::Cvar, a, d);
            let (v1, v2) = (transform_penalty(&[c], &cvar)[0], transform_penalty(&[c2], &cvar)[0]);
            prop_assert!(v1 >= -d);
            if c <= c2 { prop_assert!(v1 <= v2); }
        }
    }
}
