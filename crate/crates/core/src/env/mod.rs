//! Environments behind one stepping interface: the constrained particle
//! world, the linear-quadratic policy-evaluation testbed, and tabular chains.

mod lq;
mod particle;
mod tabular;

use std::fmt::Write as _;

use rand::Rng;

pub use lq::{spectral_radius, LqConfig, LqEpisode, LqPolicyEvalEnv};
pub use particle::{ConstraintKind, InitSampler, ParticleConfig, ParticleEnv, ACTIONS};
pub use tabular::TabularMdp;

use crate::error::Result;

pub trait Environment {
    type State: Clone;
    type Action;

    /// Episode length `T`; the state sequence runs `x_0..x_T`.
    fn horizon(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: &Self::Action, rng: &mut R) -> Result<Self::State>;
    fn rewards(&self, state: &Self::State) -> Vec<f64>;
    fn constraint(&self, state: &Self::State) -> Vec<f64>;
}

/// One step of a multi-agent episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `C(x_t)`, never overwritten.
    pub c_raw: Vec<f64>,
    /// Penalty signal after the risk transform.
    pub c_transformed: Vec<f64>,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// CSV dump: `t, x1..xS, u1..un, r1..rn, c_raw, c_transformed`
    /// (constraint columns get a `_j` suffix when there is more than one).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.steps.first() else {
            return out;
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.state.len()).map(|k| format!("x{k}")));
        header.extend((1..=first.actions.len()).map(|k| format!("u{k}")));
        header.extend((1..=first.rewards.len()).map(|k| format!("r{k}")));
        let m = first.c_raw.len();
        for prefix in ["c_raw", "c_transformed"] {
            if m == 1 {
                header.push(prefix.to_string());
            } else {
                header.extend((1..=m).map(|j| format!("{prefix}_{j}")));
            }
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for s in &self.steps {
            let mut fields = vec![s.t.to_string()];
            fields.extend(s.state.iter().map(f64::to_string));
            fields.extend(s.actions.iter().map(usize::to_string));
            fields.extend(s.rewards.iter().map(f64::to_string));
            fields.extend(s.c_raw.iter().map(f64::to_string));
            fields.extend(s.c_transformed.iter().map(f64::to_string));
            writeln!(out, "{}", fields.join(",")).unwrap();
        }
        out
    }
}
