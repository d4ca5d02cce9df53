//! Aggregate tables over run records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use ssr_core::dmrg::SweepDirection;
use ssr_core::oracle::exhaustive_min;
use ssr_core::targets::TargetSet;
use ssr_core::SsrError;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{RunRecord, RunStatus};

/// Slack on the reference minimum when deciding whether a run is exact.
pub const EXACT_TOL: f64 = 1e-8;
/// Sweeps dropped at each end of every trace before timing.
pub const EDGE_SWEEPS: usize = 10;
/// Fraction of pooled durations trimmed at each tail.
pub const TRIM_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub chi: usize,
    pub direction: SweepDirection,
    pub penalty: bool,
    pub runs: usize,
    pub failed: usize,
    pub mean_rmse: Option<f64>,
    pub std_rmse: Option<f64>,
    pub exact_ratio: Option<f64>,
    pub violation_ratio: Option<f64>,
    pub mean_sweep_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub config_hash: Option<String>,
    pub groups: Vec<GroupSummary>,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Mean sweep duration: drop the first and last [`EDGE_SWEEPS`] sweeps of each
/// run, pool the rest, trim [`TRIM_FRACTION`] at both tails.
pub fn trimmed_sweep_mean(per_run: &[Vec<f64>]) -> Option<f64> {
    let mut pooled: Vec<f64> = per_run
        .iter()
        .filter(|d| d.len() > 2 * EDGE_SWEEPS)
        .flat_map(|d| d[EDGE_SWEEPS..d.len() - EDGE_SWEEPS].iter().copied())
        .collect();
    if pooled.is_empty() {
        return None;
    }
    pooled.sort_by(f64::total_cmp);
    let cut = (pooled.len() as f64 * TRIM_FRACTION).floor() as usize;
    let kept = &pooled[cut..pooled.len() - cut];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Sweep durations of a record, initial-state entry excluded.
pub fn sweep_durations(r: &RunRecord) -> Vec<f64> {
    r.trace.iter().skip(1).map(|s| s.duration_ms).collect()
}

/// Reference minima per `(target id, penalty flag)`: the exhaustive optimum
/// when enumerable, otherwise 0 for targets with a constraint-valid witness.
pub fn reference_minima(cfg: &ExperimentConfig, targets: &TargetSet) -> CliResult<BTreeMap<(usize, bool), f64>> {
    let base = cfg.base_problem()?;
    let mut out = BTreeMap::new();
    for t in &targets.targets {
        for &penalty in &cfg.grid.penalty {
            let p = base.with_target(t.point.clone())?;
            let p = if penalty { p } else { p.with_constraints(vec![])? };
            let exact = if cfg.oracle {
                match exhaustive_min(&p, penalty) {
                    Ok(r) => Some(r.min_loss),
                    Err(SsrError::Refused(_)) => None,
                    Err(e) => return Err(e.into()),
                }
            } else {
                None
            };
            if let Some(v) = exact.or(t.witness.as_ref().map(|_| 0.0)) {
                out.insert((t.id, penalty), v);
            }
        }
    }
    Ok(out)
}

pub fn summarize(records: &[RunRecord], references: &BTreeMap<(usize, bool), f64>) -> CliResult<Summary> {
    let hash = records.first().map(|r| r.config_hash.clone());
    if let Some(h) = &hash {
        if records.iter().any(|r| &r.config_hash != h) {
            return Err(CliError::Runtime("records come from more than one config".into()));
        }
    }
    let mut groups: BTreeMap<(usize, SweepDirection, bool), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.cell.chi, r.cell.direction, r.cell.penalty))
            .or_default()
            .push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((chi, direction, penalty), rs)| {
            let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
            let rmse: Vec<f64> = ok.iter().filter_map(|r| r.rmse).collect();
            let stats = mean_std(&rmse);
            let with_seq: Vec<&RunRecord> = ok.iter().copied().filter(|r| r.sequence.is_some()).collect();
            let exact_ratio = if with_seq.is_empty() {
                None
            } else {
                with_seq
                    .iter()
                    .map(|r| {
                        references
                            .get(&(r.cell.target_id, penalty))
                            .map(|m| r.objective.is_some_and(|o| o <= m + EXACT_TOL))
                    })
                    .collect::<Option<Vec<bool>>>()
                    .map(|hits| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
            };
            let violation_ratio = (!with_seq.is_empty())
                .then(|| with_seq.iter().filter(|r| r.has_violation()).count() as f64 / with_seq.len() as f64);
            let durations: Vec<Vec<f64>> = ok.iter().map(|r| sweep_durations(r)).collect();
            GroupSummary {
                chi,
                direction,
                penalty,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                mean_rmse: stats.map(|s| s.0),
                std_rmse: stats.map(|s| s.1),
                exact_ratio,
                violation_ratio,
                mean_sweep_ms: trimmed_sweep_mean(&durations),
            }
        })
        .collect();
    Ok(Summary {
        schema: 1,
        config_hash: hash,
        groups,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("chi,direction,penalty,runs,failed,mean_rmse,std_rmse,exact_ratio,violation_ratio,mean_sweep_ms\n");
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:e}"));
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                g.chi,
                g.direction.name(),
                g.penalty,
                g.runs,
                g.failed,
                cell(g.mean_rmse),
                cell(g.std_rmse),
                cell(g.exact_ratio),
                cell(g.violation_ratio),
                cell(g.mean_sweep_ms)
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>5} {:>12} {:>7} {:>5} {:>6} {:>11} {:>11} {:>7} {:>7} {:>10}\n",
            "chi", "direction", "penalty", "runs", "failed", "rmse", "sigma", "exact", "viol", "sweep_ms"
        );
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{:>5} {:>12} {:>7} {:>5} {:>6} {:>11} {:>11} {:>7} {:>7} {:>10}",
                g.chi,
                g.direction.name(),
                g.penalty,
                g.runs,
                g.failed,
                opt(g.mean_rmse, 6),
                opt(g.std_rmse, 6),
                opt(g.exact_ratio, 3),
                opt(g.violation_ratio, 3),
                opt(g.mean_sweep_ms, 2)
            );
        }
        s
    }
}
