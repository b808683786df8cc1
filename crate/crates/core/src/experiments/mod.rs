//! Scripted reproductions at desk scale: analysis tables, policy evaluation
//! on the LQ testbed, and multi-seed training sweeps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub mod alpha;
pub mod analysis;
pub mod policy_eval;
pub mod suite;
pub mod sweeps;

pub use alpha::{alpha_heuristic, AlphaHeuristic};
pub use policy_eval::{fig5_policy_eval, PolicyEvalConfig, PolicyEvalFile, PolicyEvalOutcome};
pub use suite::{
    curve, run_suite, Curve, ExperimentsConfig, PenaltyMode, RunRecord, SnapshotField, SuiteConfig, Variant,
};
pub use sweeps::{
    dual_settling, fig6_chance_sweep, fig8_cvar_sweep, fig_avg_sweep, lambda_range, mean_bound_error, summarize_fig6,
    summarize_fig8, summarize_fig_avg, table3_bound_accuracy, BoundRow, DualSettling, Fig6Summary, Fig8Summary,
    FigAvgSummary,
};

/// Writes `contents`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Centered moving average; near the ends the window shrinks to the
/// available points.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Rise-then-fall test: some point of `curve` exceeds an earlier point and
/// a later point by more than `margin`.
pub fn rises_then_falls(curve: &[f64], margin: f64) -> bool {
    let n = curve.len();
    let mut later_min = vec![f64::INFINITY; n + 1];
    for i in (0..n).rev() {
        later_min[i] = later_min[i + 1].min(curve[i]);
    }
    let mut earlier_min = f64::INFINITY;
    for (i, &v) in curve.iter().enumerate() {
        if v > earlier_min + margin && v > later_min[i + 1] + margin {
            return true;
        }
        earlier_min = earlier_min.min(v);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_edges() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(moving_average(&v, 3), vec![1.5, 2.0, 3.0, 4.0, 4.5]);
        assert_eq!(moving_average(&v, 1), v.to_vec());
    }

    #[test]
    fn mean_std_basic() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn hump_detection() {
        assert!(rises_then_falls(&[0.0, 1.0, 0.5], 0.1));
        assert!(!rises_then_falls(&[0.0, 1.0, 2.0], 0.1));
        assert!(!rises_then_falls(&[1.0, 0.5, 0.0], 0.0));
        assert!(!rises_then_falls(&[0.0, 0.05, 0.0], 0.1));
        assert!(rises_then_falls(&[0.0, 1.0, 0.5, 3.0], 0.1));
        assert!(!rises_then_falls(&[0.0, 1.0, 0.0, 2.0, 1.95], 1.0));
        assert!(!rises_then_falls(&[], 0.0));
    }
}
