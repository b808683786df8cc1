//! Multi-seed training suites: configuration, scheduling, persistence and
//! the summaries computed from the logged outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_std, moving_average, write_file};
use crate::cmaa2c::{self, MetricsTable, SnapshotRecord, TrainerConfig};
use crate::config::RunConfig;
use crate::critics::CriticKind;
use crate::env::{InitSampler, ParticleConfig};
use crate::error::{Error, Result};
use crate::nn::NetConfig;
use crate::risk::{PenaltySpec, RiskMetric};

pub const SNAPSHOT_FILE: &str = "config.snapshot";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// Feed `C(x)` itself to the dual update (expectation constraint).
    Raw,
    /// Feed the risk transform configured in `[risk]`.
    Modified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub critic: CriticKind,
    pub penalty: PenaltyMode,
}

impl Variant {
    pub fn new(critic: CriticKind, penalty: PenaltyMode) -> Self {
        let tag = match penalty {
            PenaltyMode::Raw => "raw",
            PenaltyMode::Modified => "mp",
        };
        Variant { name: format!("{}_{tag}", critic.short()), critic, penalty }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentsConfig {
    pub suite: String,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses every available core. Capped by the run count.
    pub workers: usize,
    /// Root under which `suites/<suite>/...` is created.
    pub output_root: PathBuf,
    /// Centered moving-average window (in snapshots) for shape tests.
    pub smoothing_window: usize,
    /// Final snapshots averaged into a run's terminal value.
    pub tail_snapshots: usize,
    /// Fresh test rollouts per run for the bound-accuracy table.
    pub test_episodes: usize,
    /// Band `(-eps, eps)` the running mean of the transformed dual signal
    /// must settle in when the multiplier is interior.
    pub dual_tolerance: f64,
    /// Trailing episodes in that running mean.
    pub dual_window: usize,
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        ExperimentsConfig {
            suite: "suite".into(),
            seeds: vec![0, 1, 2, 3, 4],
            workers: 0,
            output_root: PathBuf::from("."),
            smoothing_window: 5,
            tail_snapshots: 20,
            test_episodes: 200,
            dual_tolerance: 0.05,
            dual_window: 200,
        }
    }
}

/// A suite file: the run sections shared by every run, plus the
/// experiment settings and the list of variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub experiments: ExperimentsConfig,
    pub cmaa2c: TrainerConfig,
    pub risk: PenaltySpec,
    pub environments: ParticleConfig,
    pub tensor_nn: NetConfig,
    pub variants: Vec<Variant>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig::desk("suite", PenaltySpec::cvar(), Vec::new())
    }
}

pub const PRESETS: [&str; 4] = ["fig6", "fig8", "fig_avg", "smoke"];

impl SuiteConfig {
    /// Desk-scale base: 8000 episodes, faster critic and dual steps than the
    /// published table, starts near the origin of the safe set, and a
    /// snapshot every 50 episodes so the early transient is resolved.
    pub fn desk(name: &str, risk: PenaltySpec, variants: Vec<Variant>) -> Self {
        let cmaa2c = TrainerConfig { critic_lr: 1e-3, dual_lr: 0.1, eval_interval: 50, ..TrainerConfig::default() };
        let environments =
            ParticleConfig { init: InitSampler::Uniform { low: -0.1, high: 0.1 }, ..ParticleConfig::default() };
        SuiteConfig {
            experiments: ExperimentsConfig { suite: name.into(), ..ExperimentsConfig::default() },
            cmaa2c,
            risk,
            environments,
            tensor_nn: NetConfig::default(),
            variants,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        use CriticKind::{Generic, Structured};
        use PenaltyMode::{Modified, Raw};
        let grid = || {
            vec![
                Variant::new(Generic, Raw),
                Variant::new(Structured, Raw),
                Variant::new(Generic, Modified),
                Variant::new(Structured, Modified),
            ]
        };
        Some(match name {
            "fig6" => Self::desk(name, PenaltySpec::chance(), grid()),
            "fig8" => Self::desk(name, PenaltySpec::cvar(), grid()),
            "fig_avg" => Self::desk(
                name,
                PenaltySpec::average(0.0),
                vec![Variant::new(Generic, Raw), Variant::new(Structured, Raw)],
            ),
            "smoke" => {
                let mut s = Self::desk(name, PenaltySpec::cvar(), grid());
                s.cmaa2c.episodes = 200;
                s.cmaa2c.eval_episodes = 10;
                s.experiments.seeds = vec![0];
                s.experiments.smoothing_window = 3;
                s.experiments.tail_snapshots = 2;
                s.experiments.test_episodes = 20;
                s
            }
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("suite needs at least one [[variants]] entry".into()));
        }
        if self.experiments.seeds.is_empty() {
            return Err(Error::Config("experiments.seeds must not be empty".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("variant names must be unique".into()));
        }
        if self
            .variants
            .iter()
            .any(|v| v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        {
            return Err(Error::Config("variant names must be non-empty and use only [A-Za-z0-9_-]".into()));
        }
        if self.experiments.smoothing_window == 0 || self.experiments.tail_snapshots == 0 {
            return Err(Error::Config("experiments.smoothing_window and tail_snapshots must be positive".into()));
        }
        if !(self.experiments.dual_tolerance > 0.0) || self.experiments.dual_window == 0 {
            return Err(Error::Config("experiments.dual_tolerance and dual_window must be positive".into()));
        }
        for v in &self.variants {
            self.run_config(v, self.experiments.seeds[0]).validate()?;
        }
        Ok(())
    }

    /// The complete configuration of one run.
    pub fn run_config(&self, variant: &Variant, seed: u64) -> RunConfig {
        let risk = match variant.penalty {
            PenaltyMode::Modified => self.risk.clone(),
            PenaltyMode::Raw => PenaltySpec {
                metric: RiskMetric::Average,
                alpha: self.risk.alpha.clone(),
                delta: vec![0.0; self.risk.alpha.len()],
                beta: self.risk.beta,
            },
        };
        RunConfig {
            cmaa2c: TrainerConfig { critic: variant.critic, seed, ..self.cmaa2c.clone() },
            risk,
            environments: self.environments.clone(),
            tensor_nn: self.tensor_nn.clone(),
        }
    }

    pub fn suite_dir(&self) -> PathBuf {
        self.experiments.output_root.join("suites").join(&self.experiments.suite)
    }

    pub fn run_dir(&self, variant: &Variant, seed: u64) -> PathBuf {
        self.suite_dir().join(&variant.name).join(seed.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub dir: PathBuf,
    /// The run was already complete with an identical configuration.
    pub reused: bool,
}

fn run_is_complete(dir: &Path, snapshot: &str) -> bool {
    fs::read_to_string(dir.join(SNAPSHOT_FILE)).is_ok_and(|s| s == snapshot)
        && dir.join("metrics.csv").is_file()
        && dir.join("risk_reports.jsonl").is_file()
}

/// Runs every (variant, seed) pair not already present with an identical
/// configuration. The snapshot is written last, so it marks completion.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let jobs: Vec<(Variant, u64)> =
        config.variants.iter().flat_map(|v| config.experiments.seeds.iter().map(move |&s| (v.clone(), s))).collect();
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = match config.experiments.workers {
        0 => available,
        w => w,
    }
    .min(jobs.len())
    .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|(variant, seed)| {
                let run = config.run_config(variant, *seed);
                let dir = config.run_dir(variant, *seed);
                let snapshot = run.to_toml();
                if run_is_complete(&dir, &snapshot) {
                    return Ok(RunRecord { variant: variant.name.clone(), seed: *seed, dir, reused: true });
                }
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
                cmaa2c::train(&run, Some(&dir))?;
                write_file(&dir.join(SNAPSHOT_FILE), &snapshot)?;
                Ok(RunRecord { variant: variant.name.clone(), seed: *seed, dir, reused: false })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn read_snapshots(dir: &Path) -> Result<Vec<SnapshotRecord>> {
    let path = dir.join("risk_reports.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotField {
    ProbViolation,
    Var,
    Cvar,
    CvarUb,
    TotalReturn,
    DscRaw,
}

impl SnapshotField {
    pub fn name(self) -> &'static str {
        match self {
            SnapshotField::ProbViolation => "prob_violation",
            SnapshotField::Var => "var",
            SnapshotField::Cvar => "cvar",
            SnapshotField::CvarUb => "cvar_ub",
            SnapshotField::TotalReturn => "total_return",
            SnapshotField::DscRaw => "dsc_raw",
        }
    }

    pub fn get(self, r: &SnapshotRecord) -> f64 {
        match self {
            SnapshotField::ProbViolation => r.report.prob_violation,
            SnapshotField::Var => r.report.var,
            SnapshotField::Cvar => r.report.cvar,
            SnapshotField::CvarUb => r.report.cvar_ub,
            SnapshotField::TotalReturn => r.total_return,
            SnapshotField::DscRaw => r.dsc_raw,
        }
    }
}

/// One snapshot quantity across the seeds of a variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub variant: String,
    pub episodes: Vec<usize>,
    pub per_seed: Vec<(u64, Vec<f64>)>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Curve {
    /// Mean of each seed's final `tail` snapshots.
    pub fn terminal(&self, tail: usize) -> Vec<(u64, f64)> {
        self.per_seed
            .iter()
            .map(|(s, v)| {
                let k = tail.min(v.len()).max(1);
                (*s, v[v.len() - k..].iter().sum::<f64>() / k as f64)
            })
            .collect()
    }

    pub fn terminal_mean(&self, tail: usize) -> f64 {
        let t = self.terminal(tail);
        t.iter().map(|(_, v)| v).sum::<f64>() / t.len() as f64
    }

    pub fn smoothed_mean(&self, window: usize) -> Vec<f64> {
        moving_average(&self.mean, window)
    }
}

/// Reads a snapshot quantity (constraint channel 0) for every run of a
/// variant. Every configured seed must be present.
pub fn curve(config: &SuiteConfig, variant: &Variant, field: SnapshotField) -> Result<Curve> {
    let mut episodes: Option<Vec<usize>> = None;
    let mut per_seed = Vec::new();
    for &seed in &config.experiments.seeds {
        let dir = config.run_dir(variant, seed);
        let records: Vec<SnapshotRecord> = read_snapshots(&dir)?.into_iter().filter(|r| r.channel == 0).collect();
        let eps: Vec<usize> = records.iter().map(|r| r.episode).collect();
        match &episodes {
            None => episodes = Some(eps),
            Some(e) if *e != eps => {
                return Err(Error::InvalidInput(format!(
                    "{}: seed {seed} has a different snapshot schedule",
                    variant.name
                )))
            }
            _ => {}
        }
        per_seed.push((seed, records.iter().map(|r| field.get(r)).collect::<Vec<_>>()));
    }
    let episodes = episodes.unwrap_or_default();
    let (mean, std) =
        (0..episodes.len()).map(|k| mean_std(&per_seed.iter().map(|(_, v)| v[k]).collect::<Vec<_>>())).unzip();
    Ok(Curve { variant: variant.name.clone(), episodes, per_seed, mean, std })
}

/// Long-format CSV: `variant,episode,mean,std,seed_<s>...`.
pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("variant,episode,mean,std");
    if let Some(c) = curves.first() {
        for (s, _) in &c.per_seed {
            out.push_str(&format!(",seed_{s}"));
        }
    }
    out.push('\n');
    for c in curves {
        for (k, e) in c.episodes.iter().enumerate() {
            out.push_str(&format!("{},{e},{},{}", c.variant, c.mean[k], c.std[k]));
            for (_, v) in &c.per_seed {
                out.push_str(&format!(",{}", v[k]));
            }
            out.push('\n');
        }
    }
    out
}

/// Curves for `fields`, written as `curve_<field>.csv` in the suite directory.
pub fn write_curves(config: &SuiteConfig, fields: &[SnapshotField]) -> Result<Vec<(SnapshotField, Vec<Curve>)>> {
    let dir = config.suite_dir();
    fields
        .iter()
        .map(|&f| {
            let curves = config.variants.iter().map(|v| curve(config, v, f)).collect::<Result<Vec<_>>>()?;
            write_file(&dir.join(format!("curve_{}.csv", f.name())), &curves_csv(&curves))?;
            Ok((f, curves))
        })
        .collect()
}

/// Per-seed terminal values of one quantity for every variant, plus the
/// summary CSV `terminal_<field>.csv`.
pub fn terminal_table(
    config: &SuiteConfig,
    curves: &[Curve],
    field: SnapshotField,
) -> Result<Vec<(String, Vec<(u64, f64)>)>> {
    let tail = config.experiments.tail_snapshots;
    let mut csv = String::from("variant,seed,value\n");
    let mut rows = Vec::new();
    for c in curves {
        let t = c.terminal(tail);
        for (s, v) in &t {
            csv.push_str(&format!("{},{s},{v}\n", c.variant));
        }
        let (m, sd) = mean_std(&t.iter().map(|(_, v)| *v).collect::<Vec<_>>());
        csv.push_str(&format!("{},mean,{m}\n{},std,{sd}\n", c.variant, c.variant));
        rows.push((c.variant.clone(), t));
    }
    write_file(&config.suite_dir().join(format!("terminal_{}.csv", field.name())), &csv)?;
    Ok(rows)
}

/// The metrics log of one run.
pub fn read_metrics(config: &SuiteConfig, variant: &Variant, seed: u64) -> Result<MetricsTable> {
    MetricsTable::read(&config.run_dir(variant, seed).join("metrics.csv"))
}
