use std::fs;

use cmarl::cmaa2c::{
    agent_targets, evaluate, load_actors, load_checkpoint_state, policy_gradient, run_episode, stream_rng, train,
    Learner, MetricsTable, OptimizerKind, STREAM_TRAIN,
};
use cmarl::config::RunConfig;
use cmarl::critics::{critic_loss_and_grad, CriticKind};
use cmarl::env::{InitSampler, ParticleConfig, ParticleEnv, ACTIONS};
use cmarl::nn::{softmax, CategoricalPolicy};
use cmarl::risk::PenaltySpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(critic: CriticKind, risk: PenaltySpec, episodes: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.cmaa2c.critic = critic;
    c.cmaa2c.episodes = episodes;
    c.cmaa2c.eval_interval = 50;
    c.cmaa2c.eval_episodes = 10;
    c.cmaa2c.dual_lr = 0.1;
    c.cmaa2c.critic_lr = 1e-3;
    c.tensor_nn.hidden = vec![16, 16];
    c.risk = risk;
    c
}

fn random_actors(env: &ParticleEnv, seed: u64) -> Vec<CategoricalPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..env.agents())
        .map(|_| CategoricalPolicy::with_architecture(env.obs_dim(), &[8], ACTIONS, &mut rng).unwrap())
        .collect()
}

#[test]
fn episodes_are_reproducible_and_transformed() {
    let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
    let actors = random_actors(&env, 1);
    let chance = PenaltySpec::chance();
    let a = run_episode(&env, &actors, &chance, &mut stream_rng(3, STREAM_TRAIN), 1).unwrap();
    let b = run_episode(&env, &actors, &chance, &mut stream_rng(3, STREAM_TRAIN), 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 26);
    for (t, s) in a.steps.iter().enumerate() {
        assert_eq!(s.t, t);
        let expected = if s.c_raw[0] >= 0.1 { 0.9 } else { -0.1 };
        assert_eq!(s.c_transformed, vec![expected]);
    }
    let avg = run_episode(&env, &actors, &PenaltySpec::average(0.1), &mut stream_rng(3, STREAM_TRAIN), 1).unwrap();
    for s in &avg.steps {
        assert_eq!(s.c_raw, s.c_transformed);
    }
}

#[test]
fn zero_advantages_give_a_zero_policy_gradient() {
    let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
    let actor = &random_actors(&env, 2)[0];
    let obs = vec![vec![0.1; 6]; 5];
    let (g, loss) = policy_gradient(actor, &obs, &[0, 1, 2, 3, 4], &[0.0; 5], 0.0).unwrap();
    assert!(g.as_slice().iter().all(|&v| v == 0.0));
    assert_eq!(loss, 0.0);
}

#[test]
fn linear_policy_gradient_by_hand() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let actor = CategoricalPolicy::with_architecture(2, &[], 3, &mut rng).unwrap();
    let obs = vec![vec![1.0, -0.5], vec![0.2, 0.3]];
    let actions = [2, 0];
    let adv = [1.5, -0.7];
    let (g, loss) = policy_gradient(&actor, &obs, &actions, &adv, 0.0).unwrap();
    let mut expected = vec![0.0; 9];
    let mut expected_loss = 0.0;
    for t in 0..2 {
        let p = softmax(&actor.logits(&obs[t]).unwrap());
        expected_loss -= adv[t] * p[actions[t]].ln();
        for k in 0..3 {
            let d = adv[t] * (if k == actions[t] { 1.0 } else { 0.0 } - p[k]);
            expected[6 + k] += d;
            for i in 0..2 {
                expected[2 * k + i] += d * obs[t][i];
            }
        }
    }
    for (a, b) in g.as_slice().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((loss - expected_loss).abs() < 1e-12);
}

#[test]
fn small_step_along_the_gradient_increases_the_surrogate() {
    let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
    let actor = random_actors(&env, 4).remove(0);
    let traj = run_episode(&env, &[actor.clone(), actor.clone()], &PenaltySpec::average(0.1), &mut stream_rng(4, 1), 1)
        .unwrap();
    let obs: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.observations[0].clone()).collect();
    let actions: Vec<usize> = traj.steps.iter().map(|s| s.actions[0]).collect();
    let adv: Vec<f64> = (0..obs.len()).map(|t| (t as f64 * 0.37).sin()).collect();
    let objective = |p: &CategoricalPolicy| -> f64 {
        obs.iter().zip(&actions).zip(&adv).map(|((o, &a), w)| w * p.log_prob(o, a).unwrap()).sum()
    };
    let (g, _) = policy_gradient(&actor, &obs, &actions, &adv, 0.0).unwrap();
    let eps = 1e-6;
    let mut moved = actor.clone();
    for (p, d) in moved.net_mut().params_mut().iter_mut().zip(g.as_slice()) {
        *p += eps * d;
    }
    let gain = objective(&moved) - objective(&actor);
    let predicted = eps * g.norm().powi(2);
    assert!(gain > 0.0);
    assert!((gain - predicted).abs() < 1e-3 * predicted, "{gain} vs {predicted}");
}

#[test]
fn one_sgd_learning_step_matches_its_ingredients() {
    for critic in [CriticKind::Generic, CriticKind::Structured] {
        let mut config = small_config(critic, PenaltySpec::chance(), 1);
        config.cmaa2c.optimizer = OptimizerKind::Sgd;
        config.cmaa2c.lambda_init = 0.5;
        config.cmaa2c.actor_lr = 0.01;
        let mut learner = Learner::new(&config).unwrap();
        let before: Vec<_> =
            learner.agents().iter().map(|a| (a.actor.clone(), a.critic.clone(), a.target.clone())).collect();
        let traj = learner.run_episode().unwrap();
        let lambda = [0.5];
        let tc = &config.cmaa2c;
        let metrics = learner.learn(&traj).unwrap();
        let states: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.state.clone()).collect();
        for (i, (actor, critic, target)) in before.iter().enumerate() {
            let at = agent_targets(critic, target, &traj, i, &lambda, tc.gamma, tc.kappa, 1.0).unwrap();
            let obs: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.observations[i].clone()).collect();
            let actions: Vec<usize> = traj.steps.iter().map(|s| s.actions[i]).collect();
            let (pg, _) = policy_gradient(actor, &obs, &actions, &at.advantages, 0.0).unwrap();
            let (_, cg) = critic_loss_and_grad(critic, &states, &lambda, &at.targets).unwrap();
            let after = &learner.agents()[i];
            for ((new, old), g) in after.actor.net().params().iter().zip(actor.net().params()).zip(pg.as_slice()) {
                assert!((new - (old + tc.actor_lr * g)).abs() < 1e-12);
            }
            for ((new, old), g) in after.critic.net().params().iter().zip(critic.net().params()).zip(cg.as_slice()) {
                assert!((new - (old - tc.critic_lr * g)).abs() < 1e-12);
            }
        }
        let expected = (0.5 + tc.dual_lr * metrics.dsc_transformed[0]).clamp(0.0, tc.lambda_max);
        assert!((learner.dual().lambda()[0] - expected).abs() < 1e-15);
        assert_eq!(metrics.lambda, learner.dual().lambda());
    }
}

#[test]
fn zero_episodes_keep_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(CriticKind::Structured, PenaltySpec::chance(), 0);
    let out = train(&config, Some(dir.path())).unwrap();
    assert!(out.metrics.is_empty() && out.evaluations.is_empty());
    let ckpts: Vec<_> = fs::read_dir(dir.path().join("checkpoints/run_0"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(ckpts, vec!["ckpt_0".to_string()]);
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("episode,return_agent1,return_agent2,dsc_raw,dsc_transformed,lambda_1"));
    assert_eq!(fs::read_to_string(dir.path().join("risk_reports.jsonl")).unwrap(), "");
}

#[test]
fn short_run_is_finite_bounded_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = small_config(CriticKind::Structured, PenaltySpec::cvar(), 200);
    let out = train(&config, Some(a.path())).unwrap();
    train(&config, Some(b.path())).unwrap();
    for name in ["metrics.csv", "risk_reports.jsonl", "checkpoints/run_0/ckpt_200/actor_1.mlp"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(out.metrics.len(), 200);
    assert_eq!(out.evaluations.iter().map(|e| e.0).collect::<Vec<_>>(), vec![50, 100, 150, 200]);
    let table = MetricsTable::read(&a.path().join("metrics.csv")).unwrap();
    for row in &table.rows {
        assert!(row.iter().flatten().all(|v| v.is_finite()));
    }
    for (_, l) in table.series("lambda_1").unwrap() {
        assert!((0.0..=config.cmaa2c.lambda_max).contains(&l));
    }
    let ckpt = a.path().join("checkpoints/run_0/ckpt_200");
    assert_eq!(load_actors(&ckpt, 2).unwrap(), out.actors);
    let state = load_checkpoint_state(&ckpt).unwrap();
    assert_eq!(state.episode, 200);
    assert_eq!(state.lambda, out.final_lambda);

    let mut other_seed = config.clone();
    other_seed.cmaa2c.seed = 1;
    let c = tempfile::tempdir().unwrap();
    train(&other_seed, Some(c.path())).unwrap();
    assert_ne!(fs::read(a.path().join("metrics.csv")).unwrap(), fs::read(c.path().join("metrics.csv")).unwrap());
}

fn fixed_env(position: [f64; 2]) -> ParticleEnv {
    ParticleEnv::new(ParticleConfig {
        init: InitSampler::Fixed { positions: vec![position; 2] },
        ..ParticleConfig::default()
    })
    .unwrap()
}

#[test]
fn resting_policies_inside_and_outside_the_safe_set() {
    let still = vec![CategoricalPolicy::pinned(6, ACTIONS, 0).unwrap(); 2];
    let gamma: f64 = 0.99;
    let spec = PenaltySpec::chance();
    let weight = 1.0 - gamma.powi(26);

    let safe = fixed_env([-0.5, -0.5]);
    let e = evaluate(&still, &safe, 5, gamma, &spec, &mut stream_rng(0, 2)).unwrap();
    assert_eq!(e.reports[0].prob_violation, 0.0);
    assert!((e.dsc_raw[0] + 2.0 * weight).abs() < 1e-12);
    assert_eq!(e.reports[0].var, -2.0);

    let unsafe_start = fixed_env([0.25, 0.25]);
    let e = evaluate(&still, &unsafe_start, 5, gamma, &spec, &mut stream_rng(0, 2)).unwrap();
    assert!((e.reports[0].prob_violation - 1.0).abs() < 1e-12);
    assert_eq!(e.reports[0].var, 1.0);
    assert!((e.reports[0].cvar - 1.0).abs() < 1e-12);
    // agents rest at distance sqrt(2)/2 from their landmark
    let r = -0.5 * weight;
    assert!((e.returns[0] - r).abs() < 1e-12 && (e.total_return - 2.0 * r).abs() < 1e-12);
}

#[test]
fn evaluation_reports_are_reproducible_and_ordered() {
    let env = ParticleEnv::new(ParticleConfig::default()).unwrap();
    let actors = random_actors(&env, 5);
    let spec = PenaltySpec::cvar();
    let a = evaluate(&actors, &env, 30, 0.99, &spec, &mut stream_rng(9, 2)).unwrap();
    let b = evaluate(&actors, &env, 30, 0.99, &spec, &mut stream_rng(9, 2)).unwrap();
    assert_eq!(a, b);
    let r = &a.reports[0];
    assert!(r.cvar >= r.var);
    assert!(r.cvar_ub >= r.cvar - 1e-12);
    assert_eq!(r.n_episodes, 30);
    assert!(evaluate(&actors, &env, 0, 0.99, &spec, &mut stream_rng(9, 2)).is_err());
}
