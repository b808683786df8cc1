use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Evaluation;
use crate::error::{Error, Result};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// `G r_i` per agent, without penalty terms.
    pub returns: Vec<f64>,
    pub dsc_raw: Vec<f64>,
    pub dsc_transformed: Vec<f64>,
    /// Dual variables after this episode's update.
    pub lambda: Vec<f64>,
    pub actor_losses: Vec<f64>,
    pub critic_losses: Vec<f64>,
    pub eval: Option<Evaluation>,
}

fn channel_names(prefix: &str, m: usize) -> Vec<String> {
    if m == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=m).map(|j| format!("{prefix}_{j}")).collect()
    }
}

pub fn metrics_header(agents: usize, constraints: usize) -> String {
    let mut cols = vec!["episode".to_string()];
    cols.extend((1..=agents).map(|i| format!("return_agent{i}")));
    cols.extend(channel_names("dsc_raw", constraints));
    cols.extend(channel_names("dsc_transformed", constraints));
    cols.extend((1..=constraints).map(|j| format!("lambda_{j}")));
    cols.extend((1..=agents).map(|i| format!("actor_loss_{i}")));
    cols.extend((1..=agents).map(|i| format!("critic_loss_{i}")));
    for name in ["prob_violation_eval", "var_eval", "cvar_eval", "cvar_ub"] {
        cols.extend(channel_names(name, constraints));
    }
    cols.push("return_eval".into());
    cols.join(",") + "\n"
}

impl EpisodeMetrics {
    pub fn csv_line(&self) -> String {
        let mut out = self.episode.to_string();
        let lists = [
            &self.returns,
            &self.dsc_raw,
            &self.dsc_transformed,
            &self.lambda,
            &self.actor_losses,
            &self.critic_losses,
        ];
        for v in lists.into_iter().flatten() {
            write!(out, ",{v}").unwrap();
        }
        let m = self.lambda.len();
        match &self.eval {
            Some(e) => {
                let fields: [fn(&crate::risk::RiskReport) -> f64; 4] =
                    [|r| r.prob_violation, |r| r.var, |r| r.cvar, |r| r.cvar_ub];
                for f in fields {
                    for r in &e.reports {
                        write!(out, ",{}", f(r)).unwrap();
                    }
                }
                write!(out, ",{}", e.total_return).unwrap();
            }
            None => out.push_str(&",".repeat(4 * m + 1)),
        }
        out.push('\n');
        out
    }
}

/// A parsed metrics log; empty cells read as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty metrics file")?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>().map(Some).map_err(|e| format!("row {}: {e}", k + 1))
                    }
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if row.len() != columns.len() {
                return Err(format!("row {} has {} cells, expected {}", k + 1, row.len(), columns.len()));
            }
            rows.push(row);
        }
        Ok(MetricsTable { columns, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|message| Error::Parse { path: path.to_path_buf(), message })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// `(episode, value)` pairs for the non-empty cells of `name`.
    pub fn series(&self, name: &str) -> Option<Vec<(usize, f64)>> {
        let episodes = self.column("episode")?;
        let values = self.column(name)?;
        Some(episodes.into_iter().zip(values).filter_map(|(e, v)| Some((e? as usize, v?))).collect())
    }

    pub fn as_map(&self, row: usize) -> BTreeMap<&str, Option<f64>> {
        self.columns.iter().map(String::as_str).zip(self.rows[row].iter().copied()).collect()
    }
}
