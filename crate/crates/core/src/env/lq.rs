//! Linear-quadratic policy-evaluation testbed.
//!
//! `x' = A x + B u + w` under a fixed linear policy `u = K x`, reward
//! `-x^T Q x`, constraint `C_lin x`, and a dual variable redrawn once per
//! episode from a Gaussian with mean `lambda_mean` and covariance
//! `lambda_cov` (clamped at zero).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub c_lin: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub lambda_mean: Vec<f64>,
    pub lambda_cov: Vec<Vec<f64>>,
    pub x0_mean: Vec<f64>,
    pub x0_std: f64,
}

impl Default for LqConfig {
    fn default() -> Self {
        LqConfig {
            a: vec![vec![0.9, 0.1], vec![0.0, 0.9]],
            b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            k: vec![vec![-0.2, 0.0], vec![0.0, -0.2]],
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            c_lin: vec![vec![1.0, 1.0]],
            noise_std: 0.05,
            lambda_mean: vec![1.0],
            lambda_cov: vec![vec![0.04]],
            x0_mean: vec![1.0, 1.0],
            x0_std: 0.1,
        }
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("policy_eval.{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// One LQ episode: states `x_0..x_T`, per-state reward and constraint, and
/// the episode's dual variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LqEpisode {
    pub lambda: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub rewards: Vec<f64>,
    pub constraints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LqPolicyEvalEnv {
    closed_loop: DMatrix<f64>,
    q: DMatrix<f64>,
    c_lin: DMatrix<f64>,
    noise_std: f64,
    lambda_mean: DVector<f64>,
    lambda_factor: DMatrix<f64>,
    x0_mean: DVector<f64>,
    x0_std: f64,
}

impl LqPolicyEvalEnv {
    pub fn new(config: &LqConfig) -> Result<Self> {
        let a = matrix(&config.a, "a")?;
        let b = matrix(&config.b, "b")?;
        let k = matrix(&config.k, "k")?;
        let q = matrix(&config.q, "q")?;
        let c_lin = matrix(&config.c_lin, "c_lin")?;
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || k.ncols() != n || k.nrows() != b.ncols() {
            return Err(Error::Config("policy_eval: inconsistent A, B, K shapes".into()));
        }
        if q.shape() != (n, n) || c_lin.ncols() != n || config.x0_mean.len() != n {
            return Err(Error::Config("policy_eval: inconsistent Q, C_lin or x0_mean shapes".into()));
        }
        let m = c_lin.nrows();
        let cov = matrix(&config.lambda_cov, "lambda_cov")?;
        if cov.shape() != (m, m) || config.lambda_mean.len() != m {
            return Err(Error::Config(
                "policy_eval: lambda_mean / lambda_cov must match the number of constraint rows".into(),
            ));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 {
            return Err(Error::Config("policy_eval.lambda_cov must be symmetric".into()));
        }
        let eig = SymmetricEigen::new(cov);
        if eig.eigenvalues.iter().any(|&e| e < -1e-12) {
            return Err(Error::Config("policy_eval.lambda_cov must be positive semidefinite".into()));
        }
        let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
        let lambda_factor = &eig.eigenvectors * sqrt_vals;

        let closed_loop = &a + &b * &k;
        let radius = spectral_radius(&closed_loop);
        if radius >= 1.0 {
            return Err(Error::Config(format!(
                "policy_eval: closed loop A + BK is unstable (spectral radius {radius})"
            )));
        }
        if config.noise_std < 0.0 || config.x0_std < 0.0 {
            return Err(Error::Config("policy_eval: standard deviations must be nonnegative".into()));
        }
        Ok(LqPolicyEvalEnv {
            closed_loop,
            q,
            c_lin,
            noise_std: config.noise_std,
            lambda_mean: DVector::from_vec(config.lambda_mean.clone()),
            lambda_factor,
            x0_mean: DVector::from_vec(config.x0_mean.clone()),
            x0_std: config.x0_std,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.closed_loop.nrows()
    }

    pub fn constraint_dim(&self) -> usize {
        self.c_lin.nrows()
    }

    pub fn closed_loop(&self) -> &DMatrix<f64> {
        &self.closed_loop
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn c_lin(&self) -> &DMatrix<f64> {
        &self.c_lin
    }

    pub fn reward(&self, x: &DVector<f64>) -> f64 {
        -(x.transpose() * &self.q * x)[(0, 0)]
    }

    pub fn constraint_vec(&self, x: &DVector<f64>) -> Vec<f64> {
        (&self.c_lin * x).iter().copied().collect()
    }

    pub fn sample_lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.lambda_mean.len();
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lam = &self.lambda_mean + &self.lambda_factor * z;
        lam.iter().map(|&l| l.max(0.0)).collect()
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.state_dim();
        DVector::from_fn(n, |i, _| {
            let z: f64 = rng.sample(StandardNormal);
            self.x0_mean[i] + self.x0_std * z
        })
    }

    pub fn transition<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let n = self.state_dim();
        let w = DVector::from_fn(n, |_, _| self.noise_std * rng.sample::<f64, _>(StandardNormal));
        &self.closed_loop * x + w
    }

    /// Rolls out `horizon` transitions (`horizon + 1` states) with a freshly
    /// drawn dual variable.
    pub fn rollout<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> LqEpisode {
        let lambda = self.sample_lambda(rng);
        let mut x = self.sample_initial(rng);
        let mut states = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            if t > 0 {
                x = self.transition(&x, rng);
            }
            states.push(x.clone());
        }
        let rewards = states.iter().map(|s| self.reward(s)).collect();
        let constraints = states.iter().map(|s| self.constraint_vec(s)).collect();
        LqEpisode { lambda, states, rewards, constraints }
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl Environment for LqPolicyEvalEnv {
    type State = DVector<f64>;
    type Action = ();

    fn horizon(&self) -> usize {
        usize::MAX
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.sample_initial(rng)
    }

    fn step<R: Rng + ?Sized>(&self, state: &DVector<f64>, _: &(), rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.transition(state, rng))
    }

    fn rewards(&self, state: &DVector<f64>) -> Vec<f64> {
        vec![self.reward(state)]
    }

    fn constraint(&self, state: &DVector<f64>) -> Vec<f64> {
        self.constraint_vec(state)
    }
}
