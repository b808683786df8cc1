//! Two-agent constrained particle world.
//!
//! Joint state layout: for each agent `[y_x, y_y, v_x, v_y]`, agents
//! concatenated. Rewards are `-xi_i * |y_i - y_i*|^2` and the single
//! constraint channel is the sum of all position coordinates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Transition};
use crate::error::{check_dim, Error, Result};

pub const ACTIONS: usize = 5;
const PER_AGENT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSampler {
    /// Each position coordinate drawn independently from `U[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Deterministic start positions, one per agent.
    Fixed { positions: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintKind {
    /// `C(y) = 1^T y`.
    Sum,
    /// `C(y) = v` everywhere, for ablations.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleConfig {
    pub agents: usize,
    pub episode_length: usize,
    pub dt: f64,
    pub damping: f64,
    pub mass: f64,
    pub force: f64,
    pub sensitivity: f64,
    pub landmarks: Vec<[f64; 2]>,
    pub xi: Vec<f64>,
    pub init: InitSampler,
    pub constraint: ConstraintKind,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        ParticleConfig {
            agents: 2,
            episode_length: 25,
            dt: 0.1,
            damping: 0.25,
            mass: 1.0,
            force: 1.0,
            sensitivity: 5.0,
            landmarks: vec![[0.75, 0.75]; 2],
            xi: vec![1.0; 2],
            init: InitSampler::Uniform { low: -1.0, high: 1.0 },
            constraint: ConstraintKind::Sum,
        }
    }
}

impl ParticleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::Config("environments.agents must be positive".into()));
        }
        if self.landmarks.len() != self.agents || self.xi.len() != self.agents {
            return Err(Error::Config(format!(
                "environments: need one landmark and one xi per agent ({} agents, {} landmarks, {} xi)",
                self.agents,
                self.landmarks.len(),
                self.xi.len()
            )));
        }
        if self.xi.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Config("environments.xi must be positive".into()));
        }
        if !(self.dt > 0.0) || !(self.mass > 0.0) || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config("environments: need dt > 0, mass > 0 and damping in [0, 1)".into()));
        }
        match &self.init {
            InitSampler::Uniform { low, high } if !(low <= high) => {
                Err(Error::Config("environments.init: low must not exceed high".into()))
            }
            InitSampler::Fixed { positions } if positions.len() != self.agents => {
                Err(Error::Config("environments.init: one fixed position per agent".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnv {
    config: ParticleConfig,
}

impl ParticleEnv {
    pub fn new(config: ParticleConfig) -> Result<Self> {
        config.validate()?;
        Ok(ParticleEnv { config })
    }

    pub fn config(&self) -> &ParticleConfig {
        &self.config
    }

    pub fn agents(&self) -> usize {
        self.config.agents
    }

    pub fn state_dim(&self) -> usize {
        PER_AGENT * self.config.agents
    }

    /// Own position, own velocity, offset to own landmark.
    pub fn obs_dim(&self) -> usize {
        6
    }

    pub fn constraint_dim(&self) -> usize {
        1
    }

    pub fn position(state: &[f64], agent: usize) -> [f64; 2] {
        [state[PER_AGENT * agent], state[PER_AGENT * agent + 1]]
    }

    pub fn velocity(state: &[f64], agent: usize) -> [f64; 2] {
        [state[PER_AGENT * agent + 2], state[PER_AGENT * agent + 3]]
    }

    pub fn observations(&self, state: &[f64]) -> Vec<Vec<f64>> {
        (0..self.config.agents)
            .map(|i| {
                let y = Self::position(state, i);
                let v = Self::velocity(state, i);
                let l = self.config.landmarks[i];
                vec![y[0], y[1], v[0], v[1], l[0] - y[0], l[1] - y[1]]
            })
            .collect()
    }

    pub fn rewards(&self, state: &[f64]) -> Vec<f64> {
        (0..self.config.agents)
            .map(|i| {
                let y = Self::position(state, i);
                let l = self.config.landmarks[i];
                let d2 = (y[0] - l[0]).powi(2) + (y[1] - l[1]).powi(2);
                -self.config.xi[i] * d2
            })
            .collect()
    }

    pub fn constraint(&self, state: &[f64]) -> Vec<f64> {
        match self.config.constraint {
            ConstraintKind::Sum => {
                let total = (0..self.config.agents)
                    .map(|i| {
                        let y = Self::position(state, i);
                        y[0] + y[1]
                    })
                    .sum();
                vec![total]
            }
            ConstraintKind::Constant(v) => vec![v],
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut state = vec![0.0; self.state_dim()];
        for i in 0..self.config.agents {
            let y = match &self.config.init {
                InitSampler::Uniform { low, high } => {
                    if low == high {
                        [*low, *low]
                    } else {
                        [rng.random_range(*low..*high), rng.random_range(*low..*high)]
                    }
                }
                InitSampler::Fixed { positions } => positions[i],
            };
            state[PER_AGENT * i] = y[0];
            state[PER_AGENT * i + 1] = y[1];
        }
        state
    }

    /// Deterministic double-integrator update for a joint action.
    pub fn advance(&self, state: &[f64], actions: &[usize]) -> Result<Vec<f64>> {
        check_dim("particle state", self.state_dim(), state.len())?;
        check_dim("particle joint action", self.config.agents, actions.len())?;
        let c = &self.config;
        let accel = c.force * c.sensitivity / c.mass;
        let mut next = state.to_vec();
        for (i, &a) in actions.iter().enumerate() {
            let dir = match a {
                0 => [0.0, 0.0],
                1 => [1.0, 0.0],
                2 => [-1.0, 0.0],
                3 => [0.0, 1.0],
                4 => [0.0, -1.0],
                _ => return Err(Error::InvalidInput(format!("action {a} of agent {i} outside 0..{ACTIONS}"))),
            };
            let base = PER_AGENT * i;
            for k in 0..2 {
                let v = (1.0 - c.damping) * state[base + 2 + k] + accel * c.dt * dir[k];
                next[base + 2 + k] = v;
                next[base + k] = state[base + k] + v * c.dt;
            }
        }
        Ok(next)
    }

    /// One environment step. Rewards and constraint values are evaluated on
    /// the current state `x_t`; `c_transformed` starts as a copy of `c_raw`.
    pub fn step(&self, t: usize, state: &[f64], actions: &[usize]) -> Result<Transition> {
        let next_state = self.advance(state, actions)?;
        let c_raw = self.constraint(state);
        Ok(Transition {
            t,
            state: state.to_vec(),
            observations: self.observations(state),
            actions: actions.to_vec(),
            rewards: self.rewards(state),
            c_transformed: c_raw.clone(),
            c_raw,
            next_state,
            terminal: t >= self.config.episode_length,
        })
    }
}

impl Environment for ParticleEnv {
    type State = Vec<f64>;
    type Action = Vec<usize>;

    fn horizon(&self) -> usize {
        self.config.episode_length
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        ParticleEnv::reset(self, rng)
    }

    fn step<R: Rng + ?Sized>(&self, state: &Vec<f64>, action: &Vec<usize>, _rng: &mut R) -> Result<Vec<f64>> {
        self.advance(state, action)
    }

    fn rewards(&self, state: &Vec<f64>) -> Vec<f64> {
        ParticleEnv::rewards(self, state)
    }

    fn constraint(&self, state: &Vec<f64>) -> Vec<f64> {
        ParticleEnv::constraint(self, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env_with(landmark: [f64; 2]) -> ParticleEnv {
        ParticleEnv::new(ParticleConfig { landmarks: vec![landmark; 2], ..ParticleConfig::default() }).unwrap()
    }

    #[test]
    fn agent_at_landmark_has_zero_reward() {
        let env = env_with([0.3, -0.2]);
        let state = [0.3, -0.2, 1.0, 1.0, 5.0, 5.0, 0.0, 0.0];
        let tr = env.step(0, &state, &[3, 0]).unwrap();
        assert_eq!(tr.rewards[0], 0.0);
        assert!(tr.rewards[1] < 0.0);
    }

    #[test]
    fn constraint_cancels() {
        let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
        let state = [1.0, -1.0, 0.0, 0.0, 2.0, -2.0, 0.0, 0.0];
        assert_eq!(env.constraint(&state), vec![0.0]);
    }

    #[test]
    fn direct_formula_evaluation() {
        let env = env_with([1.0, 1.0]);
        let state = [0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0];
        let tr = env.step(0, &state, &[0, 0]).unwrap();
        assert_eq!(tr.c_raw, vec![2.0]);
        assert_eq!(tr.rewards, vec![-0.5, -0.5]);
    }

    #[test]
    fn reset_is_reproducible_with_zero_velocity() {
        let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(11));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        for i in 0..2 {
            assert_eq!(ParticleEnv::velocity(&a, i), [0.0, 0.0]);
        }
    }

    #[test]
    fn double_integrator_update() {
        let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
        let s0 = vec![0.0; 8];
        let s1 = env.advance(&s0, &[1, 4]).unwrap();
        // v = 0.75 * 0 + 5 * 0.1 = 0.5, y = 0 + 0.5 * 0.1
        assert!((s1[2] - 0.5).abs() < 1e-15 && (s1[0] - 0.05).abs() < 1e-15);
        assert!((s1[7] + 0.5).abs() < 1e-15 && (s1[5] + 0.05).abs() < 1e-15);
        let s2 = env.advance(&s1, &[0, 0]).unwrap();
        assert!((s2[2] - 0.375).abs() < 1e-15);
        assert!(env.advance(&s0, &[5, 0]).is_err());
    }

    #[test]
    fn stepping_leaves_configuration_untouched() {
        let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
        let before = env.config().clone();
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(3));
        for t in 0..30 {
            s = env.step(t, &s, &[t % 5, (t + 2) % 5]).unwrap().next_state;
        }
        assert_eq!(&before, env.config());
    }

    #[test]
    fn rejects_mismatched_agent_lists() {
        let cfg = ParticleConfig { xi: vec![1.0], ..ParticleConfig::default() };
        assert!(ParticleEnv::new(cfg).is_err());
    }
}
