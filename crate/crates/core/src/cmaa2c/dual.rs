use serde::{Deserialize, Serialize};

use crate::critics::eta;
use crate::error::{check_dim, Result};

/// Shared dual variables, kept in the box `[0, lambda_max]^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    lambda: Vec<f64>,
    lambda_max: f64,
}

impl DualState {
    pub fn new(constraints: usize, init: f64, lambda_max: f64) -> Self {
        DualState { lambda: vec![init.clamp(0.0, lambda_max); constraints], lambda_max }
    }

    pub fn from_values(lambda: Vec<f64>, lambda_max: f64) -> Self {
        let lambda = lambda.into_iter().map(|l| l.clamp(0.0, lambda_max)).collect();
        DualState { lambda, lambda_max }
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `[1, -lambda^T]^T`, derived on demand so it can never go stale.
    pub fn eta(&self) -> Vec<f64> {
        eta(&self.lambda)
    }

    /// Projected ascent `lambda <- min([lambda + lr * dsc]_+, lambda_max)`.
    pub fn step(&mut self, dsc: &[f64], lr: f64) -> Result<()> {
        check_dim("dual step", self.lambda.len(), dsc.len())?;
        for (l, g) in self.lambda.iter_mut().zip(dsc) {
            *l = (*l + lr * g).clamp(0.0, self.lambda_max);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_and_cap() {
        let mut d = DualState::new(1, 0.5, 10.0);
        d.step(&[0.0], 1.0).unwrap();
        assert_eq!(d.lambda(), &[0.5]);
        let mut d = DualState::new(1, 0.0, 10.0);
        d.step(&[-1.0], 1.0).unwrap();
        assert_eq!(d.lambda(), &[0.0]);
        let mut d = DualState::new(1, 10.0, 10.0);
        d.step(&[1.0], 1.0).unwrap();
        assert_eq!(d.lambda(), &[10.0]);
        assert_eq!(d.eta(), vec![1.0, -10.0]);
    }

    #[test]
    fn width_mismatch() {
        let mut d = DualState::new(2, 0.0, 1.0);
        assert!(d.step(&[1.0], 0.1).is_err());
    }
}
