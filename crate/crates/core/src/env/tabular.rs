use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::Environment;
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite Markov chain induced by a fixed policy, with per-state
/// constraint values (one column per constraint).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transition: DMatrix<f64>,
    initial: DVector<f64>,
    costs: DMatrix<f64>,
}

impl TabularMdp {
    pub fn new(transition: DMatrix<f64>, initial: DVector<f64>, costs: DMatrix<f64>) -> Result<Self> {
        let s = transition.nrows();
        if s == 0 || transition.ncols() != s {
            return Err(Error::InvalidInput("transition matrix must be square and non-empty".into()));
        }
        if initial.len() != s || costs.nrows() != s {
            return Err(Error::InvalidInput(format!("initial distribution and cost table must have {s} rows")));
        }
        if transition.iter().chain(initial.iter()).any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput("probabilities must be nonnegative".into()));
        }
        for (i, row) in transition.row_iter().enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!("row {i} of P sums to {total}")));
            }
        }
        let total: f64 = initial.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInput(format!("initial distribution sums to {total}")));
        }
        Ok(TabularMdp { transition, initial, costs })
    }

    /// Convenience constructor from nested rows and a single cost column.
    pub fn from_rows(p: &[Vec<f64>], p0: &[f64], costs: &[f64]) -> Result<Self> {
        let s = p.len();
        if p.iter().any(|r| r.len() != s) {
            return Err(Error::InvalidInput("transition matrix must be square".into()));
        }
        Self::new(
            DMatrix::from_fn(s, s, |i, j| p[i][j]),
            DVector::from_column_slice(p0),
            DMatrix::from_column_slice(costs.len(), 1, costs),
        )
    }

    /// Random chain with strictly positive transition rows (hence ergodic).
    pub fn random<R: Rng + ?Sized>(states: usize, rng: &mut R) -> Self {
        let mut p = DMatrix::from_fn(states, states, |_, _| rng.random_range(0.01..1.0));
        for mut row in p.row_iter_mut() {
            let total: f64 = row.iter().sum();
            row /= total;
        }
        let mut p0 = DVector::from_fn(states, |_, _| rng.random_range(0.0..1.0));
        p0 /= p0.sum();
        let costs = DMatrix::from_fn(states, 1, |_, _| rng.random_range(-1.0..1.0));
        TabularMdp::new(p, p0, costs).expect("random chain is valid by construction")
    }

    /// The two-state chain used by CLI smoke checks: mildly sticky, ergodic.
    pub fn builtin_two_state() -> Self {
        TabularMdp::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]], &[1.0, 0.0], &[-0.5, 1.0])
            .expect("builtin chain is valid")
    }

    pub fn states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn costs(&self) -> &DMatrix<f64> {
        &self.costs
    }

    /// First constraint column as a per-state vector.
    pub fn cost_column(&self, j: usize) -> Vec<f64> {
        self.costs.column(j).iter().copied().collect()
    }

    fn draw<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (k, p) in probs.enumerate() {
            acc += p;
            last = k;
            if u < acc {
                return k;
            }
        }
        last
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        Self::draw(self.initial.iter().copied(), rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        Self::draw(self.transition.row(state).iter().copied(), rng)
    }

    /// Sample path `s_0..s_horizon` (`horizon + 1` entries).
    pub fn rollout<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::with_capacity(horizon + 1);
        let mut s = self.sample_initial(rng);
        path.push(s);
        for _ in 0..horizon {
            s = self.sample_next(s, rng);
            path.push(s);
        }
        path
    }
}

impl Environment for TabularMdp {
    type State = usize;
    type Action = ();

    fn horizon(&self) -> usize {
        usize::MAX
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_initial(rng)
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, _: &(), rng: &mut R) -> Result<usize> {
        if *state >= self.states() {
            return Err(Error::InvalidInput(format!("state {state} out of range")));
        }
        Ok(self.sample_next(*state, rng))
    }

    fn rewards(&self, _state: &usize) -> Vec<f64> {
        Vec::new()
    }

    fn constraint(&self, state: &usize) -> Vec<f64> {
        self.costs.row(*state).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absorbing_chain_has_constant_path() {
        let mdp = TabularMdp::from_rows(&[vec![1.0]], &[1.0], &[0.0]).unwrap();
        let path = mdp.rollout(20, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(path, vec![0; 21]);
    }

    #[test]
    fn deterministic_two_state_chain_alternates() {
        let mdp = TabularMdp::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let path = mdp.rollout(7, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(path, vec![0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::from_rows(&[vec![0.5, 0.4], vec![0.0, 1.0]], &[1.0, 0.0], &[0.0, 0.0]);
        assert!(err.is_err());
        let err = TabularMdp::from_rows(&[vec![1.0]], &[0.9], &[0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn random_chains_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in 1..20 {
            let mdp = TabularMdp::random(s, &mut rng);
            for row in mdp.transition().row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            assert!((mdp.initial().sum() - 1.0).abs() < 1e-12);
        }
    }
}
