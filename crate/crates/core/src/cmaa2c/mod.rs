//! Constrained multi-agent advantage actor-critic.
//!
//! Each episode: roll out all agents, transform the constraint signal into
//! the configured penalty, build n-step targets from the target critics,
//! take one actor and one critic step per agent, then one projected ascent
//! step on the shared dual variables.

mod config;
mod dual;
mod metrics;

use std::borrow::Borrow;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::critics::{advantage, critic_loss_and_grad, nstep_returns, signal, Critic};
use crate::env::{ParticleEnv, Trajectory, Transition, ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Adam, AdamConfig, CategoricalPolicy, Mlp, ParamGrad};
use crate::occupation::discounted_sum;
use crate::risk::{transform_penalty, PenaltySpec, RiskReport};

pub use config::{OptimizerKind, TrainerConfig};
pub use dual::DualState;
pub use metrics::{metrics_header, EpisodeMetrics, MetricsTable};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_EVAL: u64 = 2;
/// Held-out rollouts after training (bound accuracy, alpha tuning).
pub const STREAM_TEST: u64 = 3;

/// Seeded generator on an independent ChaCha stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
enum Optimizer {
    Adam(Adam),
    Sgd(f64),
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: usize, lr: f64, adam: AdamConfig) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(params, lr, adam)),
            OptimizerKind::Sgd => Optimizer::Sgd(lr),
        }
    }

    /// Moves `params` against `grad`.
    fn descend(&mut self, params: &mut [f64], grad: &ParamGrad) -> Result<()> {
        match self {
            Optimizer::Adam(adam) => adam.step(params, grad.as_slice()),
            Optimizer::Sgd(lr) => {
                if !grad.is_finite() {
                    return Err(Error::NonFinite("gradient".into()));
                }
                for (p, g) in params.iter_mut().zip(grad.as_slice()) {
                    *p -= *lr * g;
                }
                Ok(())
            }
        }
    }
}

/// Rolls out one episode of `T + 1` steps (`t = 0..=T`) with stochastic
/// actions and fills in the transformed penalty signal.
pub fn run_episode<A: Borrow<CategoricalPolicy>>(
    env: &ParticleEnv,
    actors: &[A],
    penalty: &PenaltySpec,
    rng: &mut ChaCha8Rng,
    episode: usize,
) -> Result<Trajectory> {
    let horizon = env.config().episode_length;
    let mut state = env.reset(rng);
    let mut steps = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let obs = env.observations(&state);
        let actions = actors
            .iter()
            .zip(&obs)
            .map(|(actor, o)| actor.borrow().sample(o, rng).map(|(a, _)| a))
            .collect::<Result<Vec<_>>>()?;
        let mut tr: Transition = env.step(t, &state, &actions)?;
        if tr.next_state.iter().chain(&tr.rewards).chain(&tr.c_raw).any(|v| !v.is_finite()) {
            return Err(Error::Aborted {
                episode,
                reason: format!(
                    "non-finite dynamics at t={t}: state={:?} next={:?} rewards={:?} c={:?}",
                    tr.state, tr.next_state, tr.rewards, tr.c_raw
                ),
            });
        }
        tr.c_transformed = transform_penalty(&tr.c_raw, penalty);
        state = tr.next_state.clone();
        steps.push(tr);
    }
    Ok(Trajectory { steps })
}

/// Ascent direction `sum_t A_t grad log pi(u_t | o_t)` (plus an optional
/// entropy term) and the surrogate loss `-sum_t A_t log pi(u_t | o_t)`.
pub fn policy_gradient(
    actor: &CategoricalPolicy,
    observations: &[Vec<f64>],
    actions: &[usize],
    advantages: &[f64],
    entropy_coef: f64,
) -> Result<(ParamGrad, f64)> {
    let mut grad = ParamGrad::zeros(actor.net().param_count());
    let mut loss = 0.0;
    for ((o, &a), &adv) in observations.iter().zip(actions).zip(advantages) {
        let (logp, _) = actor.accumulate_log_prob_grad(o, a, adv, entropy_coef, &mut grad)?;
        loss -= adv * logp;
    }
    Ok((grad, loss))
}

/// Per-agent quantities derived from one trajectory before any update.
#[derive(Debug, Clone)]
pub struct AgentTargets {
    pub targets: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
}

/// n-step targets from the target critic and advantages from the online
/// critic for agent `agent`, at dual variables `lambda`.
#[allow(clippy::too_many_arguments)]
pub fn agent_targets(
    critic: &Critic,
    target: &Critic,
    traj: &Trajectory,
    agent: usize,
    lambda: &[f64],
    gamma: f64,
    kappa: usize,
    reward_scale: f64,
) -> Result<AgentTargets> {
    let kind = critic.kind();
    let signals: Vec<Vec<f64>> =
        traj.steps.iter().map(|s| signal(kind, s.rewards[agent] / reward_scale, &s.c_transformed, lambda)).collect();
    let bootstrap = traj.steps.iter().map(|s| target.heads(&s.state, lambda)).collect::<Result<Vec<_>>>()?;
    let targets = nstep_returns(&signals, &bootstrap, gamma, kappa)?;
    let eta = crate::critics::eta(lambda);
    let advantages = traj
        .steps
        .iter()
        .zip(&targets)
        .map(|(s, d)| Ok(advantage(d, &critic.heads(&s.state, lambda)?, &eta)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AgentTargets { targets, advantages })
}

#[derive(Debug, Clone, Default)]
struct RunningStd {
    count: f64,
    mean: f64,
    m2: f64,
}

impl RunningStd {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn scale(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / (self.count - 1.0)).sqrt().max(1e-8)
        }
    }
}

fn clip(grad: &mut ParamGrad, max_norm: f64) {
    if max_norm > 0.0 {
        let n = grad.norm();
        if n > max_norm {
            grad.scale(max_norm / n);
        }
    }
}

pub struct AgentNets {
    pub actor: CategoricalPolicy,
    pub critic: Critic,
    pub target: Critic,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    actor_grad: ParamGrad,
    critic_grad: ParamGrad,
}

/// Snapshot of evaluation rollouts under frozen policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// One report per constraint channel.
    pub reports: Vec<RiskReport>,
    /// Mean `G r_i` per agent, without penalty terms.
    pub returns: Vec<f64>,
    pub total_return: f64,
    /// Mean `G C` per constraint channel.
    pub dsc_raw: Vec<f64>,
}

/// Evaluates frozen stochastic policies over `n_episodes` rollouts.
pub fn evaluate<A: Borrow<CategoricalPolicy>>(
    actors: &[A],
    env: &ParticleEnv,
    n_episodes: usize,
    gamma: f64,
    penalty: &PenaltySpec,
    rng: &mut ChaCha8Rng,
) -> Result<Evaluation> {
    if n_episodes < 1 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let m = env.constraint_dim();
    let n = env.agents();
    let mut channels: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n_episodes); m];
    let mut returns = vec![0.0; n];
    let mut dsc = vec![0.0; m];
    for _ in 0..n_episodes {
        let traj = run_episode(env, actors, penalty, rng, 0)?;
        for i in 0..n {
            let r: Vec<f64> = traj.steps.iter().map(|s| s.rewards[i]).collect();
            returns[i] += discounted_sum(&r, gamma) / n_episodes as f64;
        }
        for j in 0..m {
            let c: Vec<f64> = traj.steps.iter().map(|s| s.c_raw[j]).collect();
            dsc[j] += discounted_sum(&c, gamma) / n_episodes as f64;
            channels[j].push(c);
        }
    }
    let reports =
        (0..m).map(|j| RiskReport::from_episodes(&channels[j], gamma, penalty, j)).collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { reports, total_return: returns.iter().sum(), returns, dsc_raw: dsc })
}

/// The full learner state for one run.
pub struct Learner {
    config: RunConfig,
    env: ParticleEnv,
    agents: Vec<AgentNets>,
    dual: DualState,
    rng: ChaCha8Rng,
    episode: usize,
    reward_stats: Vec<RunningStd>,
    batch_episodes: usize,
    batch_dsc: Vec<f64>,
}

impl Learner {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let env = ParticleEnv::new(config.environments.clone())?;
        let tc = &config.cmaa2c;
        let hidden = &config.tensor_nn.hidden;
        let adam = config.tensor_nn.adam;
        let mut init = stream_rng(tc.seed, STREAM_INIT);
        let m = env.constraint_dim();
        let mut agents = Vec::with_capacity(env.agents());
        for _ in 0..env.agents() {
            let actor = CategoricalPolicy::with_architecture(env.obs_dim(), hidden, ACTIONS, &mut init)?;
            let critic = Critic::new(tc.critic, env.state_dim(), m, hidden, &mut init)?;
            let (ap, cp) = (actor.net().param_count(), critic.net().param_count());
            agents.push(AgentNets {
                target: critic.clone(),
                actor,
                critic,
                actor_opt: Optimizer::new(tc.optimizer, ap, tc.actor_lr, adam),
                critic_opt: Optimizer::new(tc.optimizer, cp, tc.critic_lr, adam),
                actor_grad: ParamGrad::zeros(ap),
                critic_grad: ParamGrad::zeros(cp),
            });
        }
        Ok(Learner {
            dual: DualState::new(m, tc.lambda_init, tc.lambda_max),
            rng: stream_rng(tc.seed, STREAM_TRAIN),
            reward_stats: vec![RunningStd::default(); env.agents()],
            batch_episodes: 0,
            batch_dsc: vec![0.0; m],
            config: config.clone(),
            env,
            agents,
            episode: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env(&self) -> &ParticleEnv {
        &self.env
    }

    pub fn agents(&self) -> &[AgentNets] {
        &self.agents
    }

    pub fn actors(&self) -> Vec<CategoricalPolicy> {
        self.agents.iter().map(|a| a.actor.clone()).collect()
    }

    pub fn dual(&self) -> &DualState {
        &self.dual
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn run_episode(&mut self) -> Result<Trajectory> {
        let actors: Vec<&CategoricalPolicy> = self.agents.iter().map(|a| &a.actor).collect();
        run_episode(&self.env, &actors, &self.config.risk, &mut self.rng, self.episode + 1)
    }

    /// One full iteration: rollout, targets, actor and critic steps, dual step.
    pub fn train_episode(&mut self) -> Result<EpisodeMetrics> {
        let traj = self.run_episode()?;
        self.learn(&traj)
    }

    /// Applies the learning updates for an already collected trajectory.
    pub fn learn(&mut self, traj: &Trajectory) -> Result<EpisodeMetrics> {
        let episode = self.episode + 1;
        let tc = self.config.cmaa2c.clone();
        let abort = |e: Error| match e {
            Error::NonFinite(what) => Error::Aborted { episode, reason: format!("non-finite {what}") },
            other => other,
        };
        let lambda = self.dual.lambda().to_vec();
        let n = self.agents.len();
        let mut actor_losses = Vec::with_capacity(n);
        let mut critic_losses = Vec::with_capacity(n);

        // Targets and advantages for every agent come from the parameters
        // in place before this episode's updates.
        let mut per_agent = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter().enumerate() {
            let scale = if tc.normalize_rewards {
                for s in &traj.steps {
                    self.reward_stats[i].push(s.rewards[i]);
                }
                self.reward_stats[i].scale()
            } else {
                1.0
            };
            per_agent.push(
                agent_targets(&agent.critic, &agent.target, traj, i, &lambda, tc.gamma, tc.kappa, scale)
                    .map_err(abort)?,
            );
        }

        let states: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.state.clone()).collect();
        for (i, (agent, at)) in self.agents.iter_mut().zip(&per_agent).enumerate() {
            let obs: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.observations[i].clone()).collect();
            let actions: Vec<usize> = traj.steps.iter().map(|s| s.actions[i]).collect();
            let (pg, actor_loss) =
                policy_gradient(&agent.actor, &obs, &actions, &at.advantages, tc.entropy_coef).map_err(abort)?;
            let (critic_loss, cg) =
                critic_loss_and_grad(&agent.critic, &states, &lambda, &at.targets).map_err(abort)?;
            if !actor_loss.is_finite() || !pg.is_finite() {
                return Err(abort(Error::NonFinite("policy gradient".into())));
            }
            // descent on the negated objective
            agent.actor_grad.add_scaled(&pg, -1.0);
            agent.critic_grad.add_assign(&cg);
            actor_losses.push(actor_loss);
            critic_losses.push(critic_loss);
        }

        let gamma = tc.gamma;
        let m = self.dual.lambda().len();
        let column = |j: usize, raw: bool| -> Vec<f64> {
            traj.steps.iter().map(|s| if raw { s.c_raw[j] } else { s.c_transformed[j] }).collect()
        };
        let dsc_raw: Vec<f64> = (0..m).map(|j| discounted_sum(&column(j, true), gamma)).collect();
        let dsc_transformed: Vec<f64> = (0..m).map(|j| discounted_sum(&column(j, false), gamma)).collect();
        for (acc, v) in self.batch_dsc.iter_mut().zip(&dsc_transformed) {
            *acc += v;
        }
        self.batch_episodes += 1;
        if self.batch_episodes == tc.episodes_per_update {
            self.flush().map_err(abort)?;
        }

        self.episode = episode;
        if episode % tc.target_interval == 0 {
            for agent in &mut self.agents {
                agent.target.net_mut().copy_from(agent.critic.net())?;
            }
        }

        let returns = (0..n)
            .map(|i| {
                let r: Vec<f64> = traj.steps.iter().map(|s| s.rewards[i]).collect();
                discounted_sum(&r, gamma)
            })
            .collect();
        Ok(EpisodeMetrics {
            episode,
            returns,
            dsc_raw,
            dsc_transformed,
            lambda: self.dual.lambda().to_vec(),
            actor_losses,
            critic_losses,
            eval: None,
        })
    }

    fn flush(&mut self) -> Result<()> {
        let tc = &self.config.cmaa2c;
        let b = self.batch_episodes as f64;
        for agent in &mut self.agents {
            let mut ag = std::mem::replace(&mut agent.actor_grad, ParamGrad::zeros(0));
            let mut cg = std::mem::replace(&mut agent.critic_grad, ParamGrad::zeros(0));
            if self.batch_episodes > 1 {
                ag.scale(1.0 / b);
                cg.scale(1.0 / b);
            }
            clip(&mut ag, tc.grad_clip);
            clip(&mut cg, tc.grad_clip);
            agent.actor_opt.descend(agent.actor.net_mut().params_mut(), &ag)?;
            agent.critic_opt.descend(agent.critic.net_mut().params_mut(), &cg)?;
            agent.actor_grad = ParamGrad::zeros(ag.len());
            agent.critic_grad = ParamGrad::zeros(cg.len());
        }
        let mean: Vec<f64> = self.batch_dsc.iter().map(|d| d / b).collect();
        self.dual.step(&mean, tc.dual_lr)?;
        self.batch_dsc.iter_mut().for_each(|d| *d = 0.0);
        self.batch_episodes = 0;
        Ok(())
    }

    /// Evaluation on the fixed evaluation stream, so every snapshot of a run
    /// sees the same initial states.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let tc = &self.config.cmaa2c;
        let mut rng = stream_rng(tc.seed, STREAM_EVAL);
        evaluate(&self.actors(), &self.env, tc.eval_episodes, tc.gamma, &self.config.risk, &mut rng)
    }

    /// Writes `ckpt_<episode>/` with actor and critic networks and the dual state.
    pub fn save_checkpoint(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join(format!("ckpt_{}", self.episode));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, agent) in self.agents.iter().enumerate() {
            checkpoint::save(agent.actor.net(), &dir.join(format!("actor_{}.mlp", i + 1)))?;
            checkpoint::save(agent.critic.net(), &dir.join(format!("critic_{}.mlp", i + 1)))?;
        }
        let state = CheckpointState {
            episode: self.episode,
            lambda: self.dual.lambda().to_vec(),
            critic: self.config.cmaa2c.critic,
        };
        let path = dir.join("dual.json");
        let text = serde_json::to_string_pretty(&state).expect("dual state serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(dir)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub episode: usize,
    pub lambda: Vec<f64>,
    pub critic: crate::critics::CriticKind,
}

/// Loads the actors stored in a `ckpt_<episode>` directory.
pub fn load_actors(dir: &Path, agents: usize) -> Result<Vec<CategoricalPolicy>> {
    (1..=agents)
        .map(|i| {
            let net: Mlp = checkpoint::load(&dir.join(format!("actor_{i}.mlp")))?;
            Ok(CategoricalPolicy::new(net))
        })
        .collect()
}

pub fn load_checkpoint_state(dir: &Path) -> Result<CheckpointState> {
    let path = dir.join("dual.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path, message: e.to_string() })
}

/// Output of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpisodeMetrics>,
    pub evaluations: Vec<(usize, Evaluation)>,
    pub final_lambda: Vec<f64>,
    pub actors: Vec<CategoricalPolicy>,
}

/// One evaluation snapshot as written to `risk_reports.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub episode: usize,
    pub channel: usize,
    #[serde(flatten)]
    pub report: RiskReport,
    pub total_return: f64,
    pub dsc_raw: f64,
}

/// Trains for `cmaa2c.episodes` episodes. With an output directory, writes
/// `metrics.csv`, `risk_reports.jsonl` and `checkpoints/run_<seed>/ckpt_<k>/`.
pub fn train(config: &RunConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut learner = Learner::new(config)?;
    let tc = config.cmaa2c.clone();
    let ckpt_root = out.map(|o| o.join("checkpoints").join(format!("run_{}", tc.seed)));
    if let Some(o) = out {
        fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
    }
    if let Some(root) = &ckpt_root {
        learner.save_checkpoint(root)?;
    }
    let mut metrics = Vec::with_capacity(tc.episodes);
    let mut evaluations = Vec::new();
    for k in 1..=tc.episodes {
        let mut row = learner.train_episode()?;
        if k % tc.eval_interval == 0 || k == tc.episodes {
            let eval = learner.evaluate()?;
            row.eval = Some(eval.clone());
            evaluations.push((k, eval));
        }
        let due = tc.checkpoint_interval > 0 && k % tc.checkpoint_interval == 0;
        if let Some(root) = &ckpt_root {
            if due || k == tc.episodes {
                learner.save_checkpoint(root)?;
            }
        }
        metrics.push(row);
    }
    if let Some(o) = out {
        let n = learner.env().agents();
        let m = learner.dual().lambda().len();
        let mut csv = metrics_header(n, m);
        for row in &metrics {
            csv.push_str(&row.csv_line());
        }
        let path = o.join("metrics.csv");
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        let mut jsonl = String::new();
        for (episode, eval) in &evaluations {
            for (channel, report) in eval.reports.iter().enumerate() {
                let record = SnapshotRecord {
                    episode: *episode,
                    channel,
                    report: report.clone(),
                    total_return: eval.total_return,
                    dsc_raw: eval.dsc_raw[channel],
                };
                jsonl.push_str(&serde_json::to_string(&record).expect("record serializes"));
                jsonl.push('\n');
            }
        }
        let path = o.join("risk_reports.jsonl");
        fs::write(&path, jsonl).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome { metrics, evaluations, final_lambda: learner.dual().lambda().to_vec(), actors: learner.actors() })
}
