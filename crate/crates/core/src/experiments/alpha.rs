//! Choosing the CVaR tolerance `alpha`: train once with `alpha = 0`, then
//! take the empirical VaR of the constraint under the learned policies.

use std::path::Path;

use serde::Serialize;

use crate::cmaa2c::{evaluate, stream_rng, train, STREAM_TEST};
use crate::config::RunConfig;
use crate::env::ParticleEnv;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaHeuristic {
    /// Recommended `alpha` per constraint channel.
    pub alpha: Vec<f64>,
    pub beta: f64,
    /// CVaR of the `alpha = 0` policies on the same test rollouts.
    pub cvar: Vec<f64>,
    pub test_episodes: usize,
}

pub fn alpha_heuristic(base: &RunConfig, test_episodes: usize, out: Option<&Path>) -> Result<AlphaHeuristic> {
    if test_episodes < 1 {
        return Err(Error::Config("alpha tuning needs at least one test episode".into()));
    }
    let mut config = base.clone();
    config.risk.alpha = vec![0.0; config.risk.alpha.len()];
    config.validate()?;
    let outcome = train(&config, out)?;
    let env = ParticleEnv::new(config.environments.clone())?;
    let mut rng = stream_rng(config.cmaa2c.seed, STREAM_TEST);
    let eval = evaluate(&outcome.actors, &env, test_episodes, config.cmaa2c.gamma, &config.risk, &mut rng)?;
    let result = AlphaHeuristic {
        alpha: eval.reports.iter().map(|r| r.var).collect(),
        beta: config.risk.beta,
        cvar: eval.reports.iter().map(|r| r.cvar).collect(),
        test_episodes,
    };
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&result).expect("result serializes");
        super::write_file(&dir.join("alpha.json"), &json)?;
    }
    Ok(result)
}
