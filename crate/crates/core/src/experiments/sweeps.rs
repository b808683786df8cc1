//! The training sweeps and their summaries. Each `*_sweep` runs (or
//! resumes) its suite and then summarizes from the files on disk, so the
//! summaries can be recomputed from archived outputs alone.

use std::path::PathBuf;

use serde::Serialize;

use super::suite::{read_metrics, run_suite, terminal_table, write_curves, Curve, SnapshotField, SuiteConfig};
use super::{mean_std, rises_then_falls, write_file};
use crate::cmaa2c::{evaluate, load_actors, stream_rng, STREAM_TEST};
use crate::env::ParticleEnv;
use crate::error::{Error, Result};

/// Margin the smoothed return hump must clear on both sides.
pub const HUMP_MARGIN: f64 = 0.03;

/// Per-variant terminal values (mean of the last snapshots) for each seed.
pub type Terminal = Vec<(String, Vec<(u64, f64)>)>;

fn curves_for(all: &[(SnapshotField, Vec<Curve>)], field: SnapshotField) -> &[Curve] {
    &all.iter().find(|(f, _)| *f == field).expect("field was requested").1
}

/// Fraction of snapshots after the first quarter of training where curve
/// `a` lies at or below curve `b` (seed means).
pub fn fraction_below(a: &Curve, b: &Curve) -> f64 {
    let n = a.mean.len().min(b.mean.len());
    let start = n / 4;
    if n == start {
        return f64::NAN;
    }
    let hits = (start..n).filter(|&k| a.mean[k] <= b.mean[k]).count();
    hits as f64 / (n - start) as f64
}

/// Smallest and largest dual variable logged by any run of the suite.
pub fn lambda_range(config: &SuiteConfig) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in &config.variants {
        for &s in &config.experiments.seeds {
            let table = read_metrics(config, v, s)?;
            for name in table.columns.iter().filter(|c| c.starts_with("lambda")) {
                for (_, l) in table.series(name).unwrap_or_default() {
                    lo = lo.min(l);
                    hi = hi.max(l);
                }
            }
        }
    }
    Ok((lo, hi))
}

fn find<'a>(curves: &'a [Curve], name: &str) -> Option<&'a Curve> {
    curves.iter().find(|c| c.variant == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig6Summary {
    pub dir: PathBuf,
    pub prob_violation: Terminal,
    /// Share of post-warmup snapshots with structured MP at or below generic MP.
    pub sc_below_gc: Option<f64>,
    pub lambda_range: (f64, f64),
}

pub fn summarize_fig6(config: &SuiteConfig) -> Result<Fig6Summary> {
    use SnapshotField::*;
    let all = write_curves(config, &[ProbViolation, Cvar, TotalReturn, DscRaw])?;
    let pv = curves_for(&all, ProbViolation);
    let prob_violation = terminal_table(config, pv, ProbViolation)?;
    let sc_below_gc = match (find(pv, "sc_mp"), find(pv, "gc_mp")) {
        (Some(a), Some(b)) => Some(fraction_below(a, b)),
        _ => None,
    };
    Ok(Fig6Summary { dir: config.suite_dir(), prob_violation, sc_below_gc, lambda_range: lambda_range(config)? })
}

/// Violation-probability sweep over critic kind and penalty mode.
pub fn fig6_chance_sweep(config: &SuiteConfig) -> Result<Fig6Summary> {
    run_suite(config)?;
    summarize_fig6(config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig8Summary {
    pub dir: PathBuf,
    pub cvar: Terminal,
    pub cvar_ub: Terminal,
    pub total_return: Terminal,
    /// Whether each variant's smoothed seed-mean return curve rises then falls.
    pub return_hump: Vec<(String, bool)>,
    pub lambda_range: (f64, f64),
}

pub fn summarize_fig8(config: &SuiteConfig) -> Result<Fig8Summary> {
    use SnapshotField::*;
    let all = write_curves(config, &[Cvar, CvarUb, Var, TotalReturn, ProbViolation])?;
    let ret = curves_for(&all, TotalReturn);
    let window = config.experiments.smoothing_window;
    let mut smooth_csv = String::from("variant,episode,smoothed_return\n");
    let mut return_hump = Vec::new();
    for c in ret {
        let s = c.smoothed_mean(window);
        for (e, v) in c.episodes.iter().zip(&s) {
            smooth_csv.push_str(&format!("{},{e},{v}\n", c.variant));
        }
        return_hump.push((c.variant.clone(), rises_then_falls(&s, HUMP_MARGIN)));
    }
    write_file(&config.suite_dir().join("smoothed_total_return.csv"), &smooth_csv)?;
    Ok(Fig8Summary {
        dir: config.suite_dir(),
        cvar: terminal_table(config, curves_for(&all, Cvar), Cvar)?,
        cvar_ub: terminal_table(config, curves_for(&all, CvarUb), CvarUb)?,
        total_return: terminal_table(config, ret, TotalReturn)?,
        return_hump,
        lambda_range: lambda_range(config)?,
    })
}

/// CVaR sweep over critic kind and penalty mode.
pub fn fig8_cvar_sweep(config: &SuiteConfig) -> Result<Fig8Summary> {
    run_suite(config)?;
    summarize_fig8(config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub variant: String,
    pub seed: u64,
    pub cvar: f64,
    pub cvar_ub: f64,
    /// `|UB - CVaR| / CVaR`, or the absolute error when flagged.
    pub error: f64,
    /// CVaR was not positive, so `error` is absolute.
    pub absolute: bool,
}

/// Bound accuracy of each run's final policies on fresh test rollouts.
/// Writes `table3.csv` (per seed) and returns the rows.
pub fn table3_bound_accuracy(config: &SuiteConfig) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for v in &config.variants {
        for &seed in &config.experiments.seeds {
            let run = config.run_config(v, seed);
            let env = ParticleEnv::new(run.environments.clone())?;
            let ckpt = config
                .run_dir(v, seed)
                .join("checkpoints")
                .join(format!("run_{seed}"))
                .join(format!("ckpt_{}", run.cmaa2c.episodes));
            let actors = load_actors(&ckpt, env.agents())?;
            let mut rng = stream_rng(seed, STREAM_TEST);
            let eval =
                evaluate(&actors, &env, config.experiments.test_episodes, run.cmaa2c.gamma, &run.risk, &mut rng)?;
            let report = eval.reports.first().ok_or_else(|| Error::InvalidInput("no constraint channel".into()))?;
            let gap = (report.cvar_ub - report.cvar).abs();
            let absolute = !(report.cvar > 0.0);
            rows.push(BoundRow {
                variant: v.name.clone(),
                seed,
                cvar: report.cvar,
                cvar_ub: report.cvar_ub,
                error: if absolute { gap } else { gap / report.cvar },
                absolute,
            });
        }
    }
    let mut csv = String::from("variant,seed,cvar,cvar_ub,error,absolute\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{},{}\n", r.variant, r.seed, r.cvar, r.cvar_ub, r.error, r.absolute));
    }
    for v in &config.variants {
        let errs: Vec<f64> = rows.iter().filter(|r| r.variant == v.name).map(|r| r.error).collect();
        let (m, s) = mean_std(&errs);
        csv.push_str(&format!("{},mean,,,{m},\n{},std,,,{s},\n", v.name, v.name));
    }
    write_file(&config.suite_dir().join("table3.csv"), &csv)?;
    Ok(rows)
}

/// Mean bound error of one variant over its seeds.
pub fn mean_bound_error(rows: &[BoundRow], variant: &str) -> f64 {
    let errs: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.error).collect();
    mean_std(&errs).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigAvgSummary {
    pub dir: PathBuf,
    /// Per variant and seed: first snapshot episode with `G C <= 0`.
    pub first_feasible: Vec<(String, Vec<(u64, Option<usize>)>)>,
    pub dsc: Terminal,
    pub lambda_range: (f64, f64),
}

pub fn summarize_fig_avg(config: &SuiteConfig) -> Result<FigAvgSummary> {
    use SnapshotField::*;
    let all = write_curves(config, &[DscRaw, TotalReturn])?;
    let dsc_curves = curves_for(&all, DscRaw);
    let first_feasible = dsc_curves
        .iter()
        .map(|c| {
            let per_seed = c
                .per_seed
                .iter()
                .map(|(s, v)| {
                    let hit = v.iter().position(|&x| x <= 0.0).map(|k| c.episodes[k]);
                    (*s, hit)
                })
                .collect();
            (c.variant.clone(), per_seed)
        })
        .collect();
    Ok(FigAvgSummary {
        dir: config.suite_dir(),
        first_feasible,
        dsc: terminal_table(config, dsc_curves, DscRaw)?,
        lambda_range: lambda_range(config)?,
    })
}

/// Raw average-penalty sweep comparing critic kinds.
pub fn fig_avg_sweep(config: &SuiteConfig) -> Result<FigAvgSummary> {
    run_suite(config)?;
    summarize_fig_avg(config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSettling {
    pub variant: String,
    pub seed: u64,
    /// First episode from which every multiplier either sits at a bound or
    /// has a transformed-signal running mean inside the tolerance band;
    /// `None` when the last episode is still outside.
    pub settled_at: Option<usize>,
    /// Largest `|running mean|` over the second half of training.
    pub late_max: f64,
}

/// Fixed-point check of the dual ascent: once training settles, an interior
/// multiplier implies a near-zero running mean of its constraint signal.
/// Writes `dual_settling.csv`.
pub fn dual_settling(config: &SuiteConfig) -> Result<Vec<DualSettling>> {
    let eps = config.experiments.dual_tolerance;
    let window = config.experiments.dual_window;
    let mut rows = Vec::new();
    for v in &config.variants {
        for &seed in &config.experiments.seeds {
            let lambda_max = config.run_config(v, seed).cmaa2c.lambda_max;
            let table = read_metrics(config, v, seed)?;
            let m = table.columns.iter().filter(|c| c.starts_with("lambda_")).count();
            let n = table.rows.len();
            let mut ok = vec![true; n];
            let mut late_max: f64 = 0.0;
            for j in 1..=m {
                let signal_name = if m == 1 { "dsc_transformed".to_string() } else { format!("dsc_transformed_{j}") };
                let missing = || Error::InvalidInput(format!("metrics lack {signal_name} or lambda_{j}"));
                let signal = table.series(&signal_name).ok_or_else(missing)?;
                let lambda = table.series(&format!("lambda_{j}")).ok_or_else(missing)?;
                if signal.len() != n || lambda.len() != n {
                    return Err(missing());
                }
                let mut sum = 0.0;
                for k in 0..n {
                    sum += signal[k].1;
                    if k >= window {
                        sum -= signal[k - window].1;
                    }
                    let mean = sum / (k + 1).min(window) as f64;
                    if k >= n / 2 {
                        late_max = late_max.max(mean.abs());
                    }
                    let l = lambda[k].1;
                    ok[k] &= mean.abs() < eps || l <= 0.0 || l >= lambda_max;
                }
            }
            let settled_at = match ok.iter().rposition(|&good| !good) {
                None => Some(1),
                Some(k) if k + 1 < n => Some(k + 2),
                Some(_) => None,
            };
            rows.push(DualSettling { variant: v.name.clone(), seed, settled_at, late_max });
        }
    }
    let mut csv = String::from("variant,seed,settled_at,late_max_abs_mean\n");
    for r in &rows {
        let at = r.settled_at.map_or(String::new(), |e| e.to_string());
        csv.push_str(&format!("{},{},{at},{}\n", r.variant, r.seed, r.late_max));
    }
    write_file(&config.suite_dir().join("dual_settling.csv"), &csv)?;
    Ok(rows)
}
