//! Data behind the analytical figures: occupation measures across
//! discounts, effective horizons, and the VaR/CVaR/F(alpha) picture for a
//! standard normal.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cmaa2c::{stream_rng, STREAM_INIT};
use crate::env::TabularMdp;
use crate::error::Result;
use crate::occupation::{
    effective_horizon_t1, effective_horizon_t2, occupation_exact, stationary_distribution, DiscountSpec,
};
use crate::risk::{empirical_cvar, empirical_var, f_alpha_curve, WeightedSample};

/// `gamma,state,mu,initial,stationary` rows for every discount in `gammas`.
pub fn occupation_sweep_csv(mdp: &TabularMdp, gammas: &[f64]) -> Result<String> {
    let pi = stationary_distribution(mdp).ok();
    let mut csv = String::from("gamma,state,mu,initial,stationary\n");
    for &g in gammas {
        let mu = occupation_exact(mdp, DiscountSpec::infinite(g)?)?.measure;
        for (s, m) in mu.iter().enumerate() {
            let st = pi.as_ref().map_or(String::new(), |p| p[s].to_string());
            csv.push_str(&format!("{g},{s},{m},{},{st}\n", mdp.initial()[s]));
        }
    }
    Ok(csv)
}

/// Both horizon notions for one discount.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonRow {
    pub gamma: f64,
    pub t1: f64,
    /// `(eps, T2(gamma, eps))` pairs.
    pub t2: Vec<(f64, u64)>,
}

pub const DEFAULT_EPS: [f64; 3] = [0.5, 0.367_879_441_171_442_3, 0.1];

pub fn horizon_table(gammas: &[f64], eps: &[f64]) -> Result<Vec<HorizonRow>> {
    gammas
        .iter()
        .map(|&gamma| {
            let t2 = eps.iter().map(|&e| Ok((e, effective_horizon_t2(gamma, e)?))).collect::<Result<Vec<_>>>()?;
            Ok(HorizonRow { gamma, t1: effective_horizon_t1(gamma), t2 })
        })
        .collect()
}

pub fn horizon_csv(rows: &[HorizonRow]) -> String {
    let mut csv = String::from("gamma,t1");
    if let Some(r) = rows.first() {
        for (e, _) in &r.t2 {
            csv.push_str(&format!(",t2_eps_{e:.4}"));
        }
    }
    csv.push('\n');
    for r in rows {
        csv.push_str(&format!("{},{}", r.gamma, r.t1));
        for (_, t) in &r.t2 {
            csv.push_str(&format!(",{t}"));
        }
        csv.push('\n');
    }
    csv
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskIllustration {
    pub beta: f64,
    pub var: f64,
    pub cvar: f64,
    /// `(alpha, F(alpha))` on the grid.
    pub curve: Vec<(f64, f64)>,
    /// Grid point minimizing `F`.
    pub argmin: f64,
}

/// VaR, CVaR and the `F(alpha)` curve of `n` equally weighted standard
/// normal draws, on `points` grid values spanning `[lo, hi]`.
pub fn normal_risk_illustration(
    n: usize,
    beta: f64,
    (lo, hi): (f64, f64),
    points: usize,
    seed: u64,
) -> Result<RiskIllustration> {
    let mut rng = stream_rng(seed, STREAM_INIT);
    let w = 1.0 / n as f64;
    let samples: Vec<WeightedSample> =
        (0..n).map(|_| WeightedSample { value: rng.sample(StandardNormal), weight: w }).collect();
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    let grid: Vec<f64> = (0..points.max(2)).map(|k| lo + step * k as f64).collect();
    let curve = f_alpha_curve(&samples, beta, &grid)?;
    let argmin = curve.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|p| p.0).unwrap_or(f64::NAN);
    Ok(RiskIllustration {
        beta,
        var: empirical_var(&samples, beta)?,
        cvar: empirical_cvar(&samples, beta)?,
        curve,
        argmin,
    })
}

pub fn illustration_csv(ill: &RiskIllustration) -> String {
    let mut csv = format!("# beta={} var={} cvar={}\nalpha,f_alpha\n", ill.beta, ill.var, ill.cvar);
    for (a, f) in &ill.curve {
        csv.push_str(&format!("{a},{f}\n"));
    }
    csv
}
