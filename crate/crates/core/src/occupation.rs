//! Discounted sums, occupation measures of tabular chains, and effective
//! horizons.
//!
//! For a chain with transition matrix `P` and initial distribution `p0`,
//! the infinite-horizon occupation measure is
//! `mu = (1 - g) * sum_t g^t (P^T)^t p0 = (1 - g) (I - g P^T)^{-1} p0`,
//! and the finite-horizon variant renormalises the first `T + 1` terms by
//! `1 - g^(T+1)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::env::TabularMdp;
use crate::error::{check_dim, Error, Result};

/// Largest discount accepted by the exact solver.
pub const MAX_GAMMA: f64 = 1.0 - 1e-9;
/// Relative slack under which `g^K` and `eps` count as tied.
pub const HORIZON_TIE_RTOL: f64 = 1e-12;
const MAX_STATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscountSpec {
    pub gamma: f64,
    pub horizon: Option<usize>,
}

impl DiscountSpec {
    pub fn infinite(gamma: f64) -> Result<Self> {
        Self::new(gamma, None)
    }

    pub fn finite(gamma: f64, horizon: usize) -> Result<Self> {
        Self::new(gamma, Some(horizon))
    }

    pub fn new(gamma: f64, horizon: Option<usize>) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("discount {gamma} outside (0, 1)")));
        }
        Ok(DiscountSpec { gamma, horizon })
    }
}

/// `(1 - g) * sum_{t=0}^{T} g^t y_t`; zero for an empty sequence.
pub fn discounted_sum(values: &[f64], gamma: f64) -> f64 {
    let mut weight = 1.0 - gamma;
    let mut total = 0.0;
    for &y in values {
        total += weight * y;
        weight *= gamma;
    }
    total
}

/// Componentwise [`discounted_sum`] over a sequence of equal-length vectors.
pub fn discounted_sum_vec(values: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let width = values.first().map_or(0, Vec::len);
    (0..width)
        .map(|j| {
            let column: Vec<f64> = values.iter().map(|v| v[j]).collect();
            discounted_sum(&column, gamma)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupationMode {
    Infinite,
    Finite { horizon: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationResult {
    pub measure: Vec<f64>,
    pub mode: OccupationMode,
}

impl OccupationResult {
    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn expectation(&self, h: &[f64]) -> f64 {
        self.measure.iter().zip(h).map(|(m, v)| m * v).sum()
    }
}

fn check_chain(mdp: &TabularMdp) -> Result<()> {
    if mdp.states() > MAX_STATES {
        return Err(Error::InvalidInput(format!("exact occupation solver is limited to {MAX_STATES} states")));
    }
    Ok(())
}

pub fn occupation_exact(mdp: &TabularMdp, spec: DiscountSpec) -> Result<OccupationResult> {
    check_chain(mdp)?;
    let gamma = spec.gamma;
    if gamma > MAX_GAMMA {
        return Err(Error::InvalidInput(format!(
            "discount {gamma} too close to 1 for the exact solver (max {MAX_GAMMA})"
        )));
    }
    let s = mdp.states();
    let pt = mdp.transition().transpose();
    let measure = match spec.horizon {
        None => {
            let resolvent = DMatrix::<f64>::identity(s, s) - &pt * gamma;
            let solved =
                resolvent.lu().solve(mdp.initial()).ok_or_else(|| Error::NonFinite("singular resolvent".into()))?;
            solved * (1.0 - gamma)
        }
        Some(horizon) => {
            let mut p = mdp.initial().clone();
            let mut acc = DVector::zeros(s);
            let mut weight = 1.0 - gamma;
            for t in 0..=horizon {
                if t > 0 {
                    p = &pt * p;
                }
                acc += &p * weight;
                weight *= gamma;
            }
            acc / (1.0 - gamma.powi(horizon as i32 + 1))
        }
    };
    let mode = match spec.horizon {
        None => OccupationMode::Infinite,
        Some(horizon) => OccupationMode::Finite { horizon },
    };
    Ok(OccupationResult { measure: measure.iter().copied().collect(), mode })
}

/// Whether some power of `P` is strictly positive (irreducible and aperiodic).
pub fn is_primitive(mdp: &TabularMdp) -> bool {
    let s = mdp.states();
    let mut reach = mdp.transition().map(|p| if p > 0.0 { 1.0 } else { 0.0 });
    // Wielandt: a primitive matrix has P^k > 0 for k = (s-1)^2 + 1.
    let bound = (s - 1) * (s - 1) + 1;
    let mut power = 1;
    while power < bound {
        reach = (&reach * &reach).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        power *= 2;
    }
    reach.iter().all(|&v| v > 0.0)
}

/// Stationary distribution of an ergodic chain: the unit-sum left
/// eigenvector of `P` for eigenvalue one.
pub fn stationary_distribution(mdp: &TabularMdp) -> Result<Vec<f64>> {
    check_chain(mdp)?;
    if !is_primitive(mdp) {
        return Err(Error::InvalidInput(
            "chain is not ergodic (no strictly positive power of P); p_inf is undefined".into(),
        ));
    }
    let s = mdp.states();
    // (P^T - I) pi = 0 with the last equation replaced by 1^T pi = 1.
    let mut system = mdp.transition().transpose() - DMatrix::<f64>::identity(s, s);
    system.row_mut(s - 1).fill(1.0);
    let mut rhs = DVector::zeros(s);
    rhs[s - 1] = 1.0;
    let pi = system.lu().solve(&rhs).ok_or_else(|| Error::NonFinite("singular stationary system".into()))?;
    Ok(pi.iter().map(|&p| p.max(0.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRow {
    pub gamma: f64,
    /// `max |mu_g - p0|`.
    pub dist_initial: f64,
    /// `max |mu_g - p_inf|`, when the chain is ergodic.
    pub dist_stationary: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitsReport {
    pub rows: Vec<LimitRow>,
    pub stationary: Option<Vec<f64>>,
}

/// Sweeps `gamma_grid` and reports the distance of the occupation measure
/// to the initial and stationary distributions. Discounts above 1/2 are
/// treated as probing the `g -> 1` limit and require an ergodic chain.
pub fn occupation_limits_check(mdp: &TabularMdp, gamma_grid: &[f64]) -> Result<LimitsReport> {
    let wants_upper = gamma_grid.iter().any(|&g| g > 0.5);
    let stationary = match stationary_distribution(mdp) {
        Ok(pi) => Some(pi),
        Err(e) if wants_upper => return Err(e),
        Err(_) => None,
    };
    let p0: Vec<f64> = mdp.initial().iter().copied().collect();
    let rows = gamma_grid
        .iter()
        .map(|&gamma| {
            let mu = occupation_exact(mdp, DiscountSpec::infinite(gamma)?)?.measure;
            Ok(LimitRow {
                gamma,
                dist_initial: max_dist(&mu, &p0),
                dist_stationary: stationary.as_ref().map(|pi| max_dist(&mu, pi)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitsReport { rows, stationary })
}

pub fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Expected termination time under per-step stopping probability `1 - g`.
pub fn effective_horizon_t1(gamma: f64) -> f64 {
    1.0 / (1.0 - gamma)
}

/// Smallest `K >= 1` whose first `K` discounted weights accumulate at least
/// `1 - eps`, i.e. `g^K <= eps`. Near-ties within [`HORIZON_TIE_RTOL`]
/// count as reaching the bound.
pub fn effective_horizon_t2(gamma: f64, eps: f64) -> Result<u64> {
    if !(gamma > 0.0 && gamma < 1.0 && eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("need gamma, eps in (0, 1); got gamma={gamma}, eps={eps}")));
    }
    let reaches = |k: u64| gamma.powf(k as f64) <= eps * (1.0 + HORIZON_TIE_RTOL);
    let mut k = ((eps.ln() / gamma.ln()).ceil() as u64).max(1);
    while k > 1 && reaches(k - 1) {
        k -= 1;
    }
    while !reaches(k) {
        k += 1;
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// Discounted sum of `E[h(x_t)]` along the chain.
    pub lhs: f64,
    /// `mu^T h`.
    pub rhs: f64,
    pub gap: f64,
    pub terms: usize,
}

/// Compares the discounted trajectory expectation of `h` (matrix powers,
/// truncated once the tail bound `g^K max|h|` drops below 1e-16) with the
/// expectation of `h` under the occupation measure.
pub fn discounted_expectation_equivalence(
    mdp: &TabularMdp,
    h: &[f64],
    spec: DiscountSpec,
) -> Result<EquivalenceReport> {
    check_dim("per-state function", mdp.states(), h.len())?;
    let mu = occupation_exact(mdp, spec)?;
    let rhs = mu.expectation(h);
    let gamma = spec.gamma;
    let h_max = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let last = match spec.horizon {
        Some(t) => t,
        None => {
            if h_max == 0.0 {
                0
            } else {
                let k = ((1e-16 / h_max).ln() / gamma.ln()).ceil();
                if !(k.is_finite() && k < 5e8) {
                    return Err(Error::InvalidInput(format!("discount {gamma} needs too many series terms")));
                }
                k as usize
            }
        }
    };
    let pt = mdp.transition().transpose();
    let hv = DVector::from_column_slice(h);
    let mut p = mdp.initial().clone();
    let mut per_step = Vec::with_capacity(last + 1);
    for t in 0..=last {
        if t > 0 {
            p = &pt * p;
        }
        per_step.push(p.dot(&hv));
    }
    let mut lhs = discounted_sum(&per_step, gamma);
    if let Some(t) = spec.horizon {
        lhs /= 1.0 - gamma.powi(t as i32 + 1);
    }
    Ok(EquivalenceReport { lhs, rhs, gap: (lhs - rhs).abs(), terms: last + 1 })
}
