use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use cmarl::cmaa2c::{self, load_actors, stream_rng, STREAM_EVAL};
use cmarl::config::{load_run_config, load_toml, RunConfig};
use cmarl::env::{ParticleEnv, TabularMdp};
use cmarl::experiments::analysis::{
    horizon_csv, horizon_table, illustration_csv, normal_risk_illustration, occupation_sweep_csv, DEFAULT_EPS,
};
use cmarl::experiments::sweeps::mean_bound_error;
use cmarl::experiments::{
    alpha_heuristic, dual_settling, fig5_policy_eval, run_suite, summarize_fig6, summarize_fig8, summarize_fig_avg,
    table3_bound_accuracy, write_file, PolicyEvalFile, SuiteConfig,
};
use cmarl::occupation::{
    discounted_expectation_equivalence, effective_horizon_t1, effective_horizon_t2, occupation_exact,
    occupation_limits_check, DiscountSpec,
};
use cmarl::risk::RiskMetric;
use cmarl::{Error, Result};

const OUTPUT_ROOT_VAR: &str = "CMARL_OUTPUT_ROOT";
const WORKERS_VAR: &str = "CMARL_WORKERS";

/// Constrained multi-agent actor-critic experiments.
///
/// Exit status: 0 on success, 1 on configuration or input errors, 2 when a
/// run aborts numerically. Numeric results go to files; standard output
/// carries a short human summary.
#[derive(Parser, Debug)]
#[command(name = "cmarl", version)]
struct Cli {
    /// Print more detail.
    #[arg(short, long, global = true, conflicts_with = "quiet")]
    verbose: bool,
    /// Suppress the summary on standard output.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run from a run config.
    Train {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory [default: $CMARL_OUTPUT_ROOT/runs/<seed>, or ./runs/<seed>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `cmaa2c.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate saved actors on the evaluation stream.
    Evaluate {
        /// Run config (TOML), usually the run's `config.snapshot`.
        #[arg(long)]
        config: PathBuf,
        /// A `ckpt_<episode>` directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `cmaa2c.eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        /// Overrides `cmaa2c.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Writes `evaluation.json` here when given.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a multi-seed suite (resumes completed runs) and summarize it.
    Suite {
        /// Built-in suite: fig6, fig8, fig_avg, smoke, or analysis.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Suite config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output root; overrides the config and $CMARL_OUTPUT_ROOT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; overrides the config and $CMARL_WORKERS.
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Check the occupation-measure identities on a tabular chain.
    OracleCheck {
        /// `builtin-2state` or `random:<states>:<seed>`.
        #[arg(long, default_value = "builtin-2state")]
        chain: String,
        /// Also write the occupation sweep over discounts as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the two effective-horizon notions for a discount.
    Horizon {
        /// Discount factor in (0, 1).
        #[arg(long)]
        gamma: f64,
        /// Thresholds for T2 [default: 0.5, 1/e, 0.1].
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Compare critic structures on the LQ policy-evaluation task.
    PolicyEval {
        /// Policy-evaluation config (TOML) [default: built-in task].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Writes `fig5.csv` and `fig5_summary.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `cmaa2c.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recommend a CVaR tolerance from one run with alpha = 0.
    AlphaTune {
        /// Run config (TOML); alpha is forced to zero.
        #[arg(long)]
        config: PathBuf,
        /// Held-out rollouts used for the VaR estimate.
        #[arg(long, default_value_t = 200)]
        test_episodes: usize,
        /// Output directory for the run and its recommendation.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `cmaa2c.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

struct Printer {
    verbose: bool,
    quiet: bool,
}

impl Printer {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn detail(&self, line: impl AsRef<str>) {
        if self.verbose {
            println!("{}", line.as_ref());
        }
    }
}

fn keys_help(title: &str, toml: String) -> String {
    format!("{title}\n\n{toml}")
}

fn command() -> clap::Command {
    let run = RunConfig::default().to_toml();
    let run_help = || keys_help("Config keys and defaults (unknown keys are rejected):", run.clone());
    let suite = toml::to_string(&SuiteConfig::preset("fig8").expect("preset exists")).expect("suite serializes");
    let policy = toml::to_string(&PolicyEvalFile::default()).expect("config serializes");
    Cli::command()
        .mut_subcommand("train", |c| c.after_long_help(run_help()))
        .mut_subcommand("evaluate", |c| c.after_long_help(run_help()))
        .mut_subcommand("alpha-tune", |c| c.after_long_help(run_help()))
        .mut_subcommand("suite", |c| {
            c.after_long_help(keys_help(
                "Suite config keys, shown with the fig8 preset (run sections default to the \
                 published table when omitted):",
                suite,
            ))
        })
        .mut_subcommand("policy-eval", |c| c.after_long_help(keys_help("Config keys and defaults:", policy)))
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from)
}

fn env_workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{WORKERS_VAR} must be a nonnegative integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn train(p: &Printer, config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut run = load_run_config(config)?;
    if let Some(s) = seed {
        run.cmaa2c.seed = s;
    }
    let out = out.unwrap_or_else(|| {
        output_root().unwrap_or_else(|| PathBuf::from(".")).join("runs").join(run.cmaa2c.seed.to_string())
    });
    let outcome = cmaa2c::train(&run, Some(&out))?;
    write_file(&out.join("config.snapshot"), &run.to_toml())?;
    p.say(format!("trained {} episodes -> {}", run.cmaa2c.episodes, out.display()));
    if let Some((k, eval)) = outcome.evaluations.last() {
        let r = &eval.reports[0];
        p.say(format!(
            "episode {k}: return {} | P(C >= {}) {} | CVaR {} | bound {} | lambda {:?}",
            fmt(eval.total_return),
            r.alpha,
            fmt(r.prob_violation),
            fmt(r.cvar),
            fmt(r.cvar_ub),
            outcome.final_lambda
        ));
    }
    Ok(())
}

fn evaluate(
    p: &Printer,
    config: &Path,
    checkpoint: &Path,
    episodes: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut run = load_run_config(config)?;
    if let Some(s) = seed {
        run.cmaa2c.seed = s;
    }
    let env = ParticleEnv::new(run.environments.clone())?;
    let actors = load_actors(checkpoint, env.agents())?;
    let n = episodes.unwrap_or(run.cmaa2c.eval_episodes);
    let mut rng = stream_rng(run.cmaa2c.seed, STREAM_EVAL);
    let eval = cmaa2c::evaluate(&actors, &env, n, run.cmaa2c.gamma, &run.risk, &mut rng)?;
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&eval).expect("evaluation serializes");
        write_file(&dir.join("evaluation.json"), &json)?;
    }
    p.say(format!("{n} episodes, total return {}", fmt(eval.total_return)));
    for (j, r) in eval.reports.iter().enumerate() {
        p.say(format!(
            "channel {j}: G C {} | P(C >= {}) {} | VaR {} | CVaR {} | bound {}",
            fmt(eval.dsc_raw[j]),
            r.alpha,
            fmt(r.prob_violation),
            fmt(r.var),
            fmt(r.cvar),
            fmt(r.cvar_ub)
        ));
    }
    Ok(())
}

fn analysis(p: &Printer, root: &Path) -> Result<()> {
    let dir = root.join("suites").join("analysis");
    let gammas: Vec<f64> = [1e-6, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 0.999, 1.0 - 1e-6].to_vec();
    write_file(&dir.join("occupation_sweep.csv"), &occupation_sweep_csv(&TabularMdp::builtin_two_state(), &gammas)?)?;
    let hg = [0.5, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999];
    write_file(&dir.join("horizons.csv"), &horizon_csv(&horizon_table(&hg, &DEFAULT_EPS)?))?;
    let ill = normal_risk_illustration(1_000_000, 0.9, (-1.0, 3.0), 401, 0)?;
    write_file(&dir.join("risk_illustration.csv"), &illustration_csv(&ill))?;
    p.say(format!(
        "analysis data -> {} (normal: VaR {} CVaR {} argmin F {})",
        dir.display(),
        fmt(ill.var),
        fmt(ill.cvar),
        fmt(ill.argmin)
    ));
    Ok(())
}

fn suite(
    p: &Printer,
    preset: Option<String>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    seeds: Option<Vec<u64>>,
) -> Result<()> {
    let root = out.clone().or_else(output_root);
    if preset.as_deref() == Some("analysis") {
        return analysis(p, &root.unwrap_or_else(|| PathBuf::from(".")));
    }
    let mut cfg = match (&preset, &config) {
        (Some(name), _) => SuiteConfig::preset(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset {name:?}; expected one of {:?} or analysis",
                cmarl::experiments::suite::PRESETS
            ))
        })?,
        (None, Some(path)) => load_toml(path)?,
        (None, None) => unreachable!("clap requires one of --preset/--config"),
    };
    if let Some(r) = root {
        cfg.experiments.output_root = r;
    }
    if let Some(w) = workers.or(env_workers()?) {
        cfg.experiments.workers = w;
    }
    if let Some(s) = seeds {
        cfg.experiments.seeds = s;
    }
    let records = run_suite(&cfg)?;
    let reused = records.iter().filter(|r| r.reused).count();
    p.say(format!(
        "suite {}: {} runs ({reused} reused) -> {}",
        cfg.experiments.suite,
        records.len(),
        cfg.suite_dir().display()
    ));
    let terminal_line = |name: &str, rows: &[(String, Vec<(u64, f64)>)]| {
        for (variant, vals) in rows {
            let xs: Vec<f64> = vals.iter().map(|(_, v)| *v).collect();
            let (m, s) = cmarl::experiments::mean_std(&xs);
            p.say(format!("  {variant:8} {name} {} +/- {}", fmt(m), fmt(s)));
            p.detail(format!("           per seed {vals:?}"));
        }
    };
    match cfg.risk.metric {
        RiskMetric::Chance => {
            let s = summarize_fig6(&cfg)?;
            terminal_line("P(C >= alpha)", &s.prob_violation);
            p.say(format!("  lambda range {:?}", s.lambda_range));
        }
        RiskMetric::Cvar => {
            let s = summarize_fig8(&cfg)?;
            terminal_line("CVaR", &s.cvar);
            terminal_line("bound", &s.cvar_ub);
            terminal_line("return", &s.total_return);
            for (v, hump) in &s.return_hump {
                p.say(format!("  {v:8} return rises then falls: {hump}"));
            }
            let rows = table3_bound_accuracy(&cfg)?;
            for v in &cfg.variants {
                p.say(format!("  {:8} bound error {:.2}%", v.name, 100.0 * mean_bound_error(&rows, &v.name)));
            }
            p.say(format!("  lambda range {:?}", s.lambda_range));
        }
        RiskMetric::Average => {
            let s = summarize_fig_avg(&cfg)?;
            terminal_line("G C", &s.dsc);
            for (v, hits) in &s.first_feasible {
                p.say(format!("  {v:8} first snapshot with G C <= 0: {hits:?}"));
            }
            p.say(format!("  lambda range {:?}", s.lambda_range));
        }
    }
    for r in dual_settling(&cfg)? {
        let at = r.settled_at.map_or("never".to_string(), |e| format!("episode {e}"));
        p.detail(format!("  {:8} seed {} dual settled: {at}", r.variant, r.seed));
    }
    Ok(())
}

const GAP_TOL: f64 = 1e-9;
const LOWER_LIMIT_TOL: f64 = 1e-5;
const UPPER_LIMIT_TOL: f64 = 1e-4;

fn oracle_check(p: &Printer, chain: &str, out: Option<PathBuf>) -> Result<bool> {
    let mdp = match chain {
        "builtin-2state" => TabularMdp::builtin_two_state(),
        other => {
            let parsed = other.strip_prefix("random:").and_then(|rest| {
                let (states, seed) = rest.split_once(':')?;
                Some((states.parse::<usize>().ok()?, seed.parse::<u64>().ok()?))
            });
            match parsed {
                Some((states, seed)) if states >= 1 => {
                    TabularMdp::random(states, &mut cmarl::cmaa2c::stream_rng(seed, 0))
                }
                _ => {
                    return Err(Error::Config(format!(
                        "unknown chain {other:?}; expected builtin-2state or random:<states>:<seed>"
                    )))
                }
            }
        }
    };
    let mut ok = true;
    let mut check = |name: String, value: f64, tol: f64| {
        let pass = value < tol;
        ok &= pass;
        p.say(format!("{} {name}: {value:.3e} (tol {tol:.0e})", if pass { "PASS" } else { "FAIL" }));
    };
    for spec in [DiscountSpec::infinite(0.9)?, DiscountSpec::finite(0.9, 25)?] {
        let mu = occupation_exact(&mdp, spec)?;
        check(format!("normalization {:?}", mu.mode), (mu.total_mass() - 1.0).abs(), GAP_TOL);
        let rep = discounted_expectation_equivalence(&mdp, &mdp.cost_column(0), spec)?;
        check(format!("equivalence {:?}", mu.mode), rep.gap, GAP_TOL);
    }
    let limits = occupation_limits_check(&mdp, &[1e-6, 1.0 - 1e-6])?;
    check("limit gamma->0 (to initial)".into(), limits.rows[0].dist_initial, LOWER_LIMIT_TOL);
    let upper = limits.rows[1].dist_stationary.unwrap_or(f64::INFINITY);
    check("limit gamma->1 (to stationary)".into(), upper, UPPER_LIMIT_TOL);
    for g in [0.5, 0.9, 0.95, 0.99, 0.995] {
        let t1 = effective_horizon_t1(g);
        let t2 = effective_horizon_t2(g, g.powf(t1))?;
        check(format!("horizons agree at gamma={g} (T1={t1:.1}, T2={t2})"), (t2 as f64 - t1.round()).abs(), 0.5);
    }
    if let Some(dir) = out {
        let gammas = [1e-6, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 0.999, 1.0 - 1e-6];
        write_file(&dir.join("occupation_sweep.csv"), &occupation_sweep_csv(&mdp, &gammas)?)?;
    }
    Ok(ok)
}

fn horizon(p: &Printer, gamma: f64, eps: Option<Vec<f64>>) -> Result<()> {
    let eps = eps.unwrap_or_else(|| DEFAULT_EPS.to_vec());
    let row = horizon_table(&[gamma], &eps)?.remove(0);
    p.say(format!("gamma = {gamma}"));
    p.say(format!("T1 = 1/(1-gamma) = {:.6}", row.t1));
    p.say("eps        T2");
    for (e, t) in &row.t2 {
        p.say(format!("{e:<10.6} {t}"));
    }
    Ok(())
}

fn policy_eval(p: &Printer, config: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut file: PolicyEvalFile = match &config {
        Some(path) => load_toml(path)?,
        None => PolicyEvalFile::default(),
    };
    if let Some(s) = seed {
        file.policy_eval.seed = s;
    }
    let out = out.unwrap_or_else(|| output_root().unwrap_or_else(|| PathBuf::from(".")).join("policy_eval"));
    let o = fig5_policy_eval(&file, Some(&out))?;
    let last = o.mstde.last().copied().unwrap_or([f64::NAN; 3]);
    p.say(format!("policy evaluation -> {}", out.display()));
    p.say(format!(
        "final MSTDE: generic {} | input-augmented {} | structured {}",
        fmt(last[0]),
        fmt(last[1]),
        fmt(last[2])
    ));
    p.say(format!(
        "gap generic - structured {} +/- {} (predicted {})",
        fmt(o.gap),
        fmt(o.gap_se),
        fmt(o.predicted_gap)
    ));
    p.detail(format!("constraint mean {:?}, covariance {:?}", o.c_mean, o.c_cov));
    Ok(())
}

fn alpha_tune(p: &Printer, config: &Path, test_episodes: usize, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut run = load_run_config(config)?;
    if let Some(s) = seed {
        run.cmaa2c.seed = s;
    }
    let out = out.unwrap_or_else(|| {
        output_root().unwrap_or_else(|| PathBuf::from(".")).join("alpha_tune").join(run.cmaa2c.seed.to_string())
    });
    let r = alpha_heuristic(&run, test_episodes, Some(&out))?;
    p.say(format!(
        "recommended alpha {:?} (VaR at beta={} over {} test episodes; CVaR {:?})",
        r.alpha, r.beta, r.test_episodes, r.cvar
    ));
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let p = Printer { verbose: cli.verbose, quiet: cli.quiet };
    match cli.command {
        Command::Train { config, out, seed } => train(&p, &config, out, seed)?,
        Command::Evaluate { config, checkpoint, episodes, seed, out } => {
            evaluate(&p, &config, &checkpoint, episodes, seed, out)?
        }
        Command::Suite { preset, config, out, workers, seeds } => suite(&p, preset, config, out, workers, seeds)?,
        Command::OracleCheck { chain, out } => return oracle_check(&p, &chain, out),
        Command::Horizon { gamma, eps } => horizon(&p, gamma, eps)?,
        Command::PolicyEval { config, out, seed } => policy_eval(&p, config, out, seed)?,
        Command::AlphaTune { config, test_episodes, out, seed } => alpha_tune(&p, &config, test_episodes, out, seed)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
