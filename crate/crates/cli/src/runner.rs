//! Grid execution with append-only JSONL persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use ssr_core::dmrg::{dmrg_run, DmrgPlan, SweepDirection, SweepRecord};
use ssr_core::mpo::loss_mpo_sum;
use ssr_core::mps::Mps;
use ssr_core::targets::TargetSet;
use ssr_core::{SsrError, SsrProblem, StackingSequence};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const TARGETS_FILE: &str = "targets.json";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub target_id: usize,
    pub restart: usize,
    pub chi: usize,
    pub direction: SweepDirection,
    pub penalty: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub config_hash: String,
    pub cell: CellKey,
    pub seed: u64,
    pub plan: DmrgPlan,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub final_expectation: Option<f64>,
    /// Loss of the extracted sequence against the target, penalties excluded.
    pub loss: Option<f64>,
    pub rmse: Option<f64>,
    /// Loss plus the penalties that were part of the optimized operator.
    pub objective: Option<f64>,
    pub sequence: Option<StackingSequence>,
    /// Violation counts of every configured constraint, by kind.
    pub violations: BTreeMap<String, f64>,
    pub trace: Vec<SweepRecord>,
    pub duration_ms: f64,
}

impl RunRecord {
    pub fn has_violation(&self) -> bool {
        self.violations.values().any(|&v| v > 0.0)
    }

    /// Trace as canonical JSONL (no wall-clock fields).
    pub fn canonical_trace(&self) -> CliResult<String> {
        let trace = ssr_core::dmrg::SweepTrace {
            records: self.trace.clone(),
        };
        Ok(trace.to_canonical_jsonl()?)
    }
}

/// Initial-state seed for `(target, restart)`; shared by all χ, directions and
/// penalty settings so cells differ only in the plan.
pub fn init_seed(master: u64, target_id: usize, restart: usize) -> u64 {
    let mut z = master
        .wrapping_add((target_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((restart as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn grid_cells(cfg: &ExperimentConfig, targets: &TargetSet) -> Vec<CellKey> {
    let mut cells = Vec::new();
    for t in &targets.targets {
        for restart in 0..cfg.restarts {
            for &penalty in &cfg.grid.penalty {
                for &direction in &cfg.grid.directions {
                    for &chi in &cfg.grid.chi {
                        cells.push(CellKey {
                            target_id: t.id,
                            restart,
                            chi,
                            direction,
                            penalty,
                        });
                    }
                }
            }
        }
    }
    cells
}

pub fn violation_counts(problem: &SsrProblem, seq: &StackingSequence) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for c in problem.constraints() {
        *out.entry(c.kind_name().to_string()).or_insert(0.0) += c.violations(problem.angle_set(), seq);
    }
    out
}

/// Run one grid cell; failures become records with `status: failed`.
pub fn run_cell(
    cfg: &ExperimentConfig,
    base: &SsrProblem,
    targets: &TargetSet,
    cell: &CellKey,
) -> CliResult<(RunRecord, Option<Mps>)> {
    let target = targets
        .targets
        .iter()
        .find(|t| t.id == cell.target_id)
        .ok_or_else(|| CliError::Usage(format!("no target with id {}", cell.target_id)))?;
    let full = base.with_target(target.point.clone())?;
    let run_problem = if cell.penalty {
        full.clone()
    } else {
        full.with_constraints(vec![])?
    };
    let seed = init_seed(cfg.seed, cell.target_id, cell.restart);
    let plan = cfg.grid.plan(cell.chi, cell.direction, seed)?;
    let mut record = RunRecord {
        schema: 1,
        config_hash: cfg.hash(),
        cell: cell.clone(),
        seed,
        plan: plan.clone(),
        status: RunStatus::Ok,
        error: None,
        final_expectation: None,
        loss: None,
        rmse: None,
        objective: None,
        sequence: None,
        violations: BTreeMap::new(),
        trace: vec![],
        duration_ms: 0.0,
    };
    let start = Instant::now();
    let result = (|| -> Result<_, SsrError> {
        let terms = loss_mpo_sum(&run_problem)?;
        let init = Mps::random(run_problem.n_plies(), run_problem.d(), cell.chi, seed)?;
        dmrg_run(&run_problem, &terms, &init, &plan)
    })();
    record.duration_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(out) => {
            record.final_expectation = out.trace.final_expectation();
            record.trace = out.trace.records;
            if let Some(seq) = out.sequence {
                record.loss = Some(full.loss(&seq)?);
                record.rmse = Some(full.rmse(&seq)?);
                record.objective = Some(run_problem.objective(&seq)?);
                record.violations = violation_counts(&full, &seq);
                record.sequence = Some(seq);
            }
            Ok((record, Some(out.mps)))
        }
        Err(e) => {
            record.status = RunStatus::Failed;
            record.error = Some(e.to_string());
            if let SsrError::Aborted { trace, .. } = e {
                record.trace = trace.records;
            }
            Ok((record, None))
        }
    }
}

/// Read records from a JSONL file; a truncated final line is ignored.
pub fn read_records(path: &Path) -> CliResult<Vec<RunRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == lines.len() => log::warn!("ignoring truncated last record: {e}"),
            Err(e) => return Err(CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Drop a trailing partial line so appends start on a fresh line.
fn trim_partial_line(path: &Path) -> CliResult<()> {
    let mut f = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    f.set_len(keep as u64)?;
    f.seek(SeekFrom::End(0))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub resume: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub total_cells: usize,
    pub skipped: usize,
    pub executed: usize,
    pub failed: usize,
    pub records: Vec<RunRecord>,
}

/// Execute every grid cell not already completed in `out/records.jsonl`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> CliResult<ExperimentReport> {
    fs::create_dir_all(out)?;
    let records_path = out.join(RECORDS_FILE);
    let hash = cfg.hash();
    let existing = read_records(&records_path)?;
    if !existing.is_empty() && !opts.resume {
        return Err(CliError::Usage(format!(
            "{} already holds records; pass --resume or choose another --out",
            records_path.display()
        )));
    }
    if let Some(other) = existing.iter().find(|r| r.config_hash != hash) {
        return Err(CliError::Usage(format!(
            "{} was written by config {}, current config is {hash}",
            records_path.display(),
            other.config_hash
        )));
    }
    let config_path = out.join(CONFIG_FILE);
    if config_path.exists() {
        let prior = ExperimentConfig::from_json_str(&fs::read_to_string(&config_path)?)?;
        if prior.hash() != hash {
            if !opts.resume && existing.is_empty() {
                log::info!("replacing config in {}", out.display());
            } else {
                return Err(CliError::Usage(format!("{} belongs to another config", out.display())));
            }
        }
    }
    fs::write(&config_path, serde_json::to_string_pretty(cfg)?)?;

    let base = cfg.base_problem()?;
    let targets = cfg.target_set()?;
    fs::write(out.join(TARGETS_FILE), targets.to_json_string()?)?;

    let done: BTreeSet<CellKey> = existing
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .map(|r| r.cell.clone())
        .collect();
    let all = grid_cells(cfg, &targets);
    let pending: Vec<CellKey> = all.iter().filter(|c| !done.contains(c)).cloned().collect();
    let mut report = ExperimentReport {
        out_dir: out.to_path_buf(),
        total_cells: all.len(),
        skipped: all.len() - pending.len(),
        ..Default::default()
    };
    log::info!(
        "{} cells, {} already complete, {} to run on {} thread(s)",
        all.len(),
        report.skipped,
        pending.len(),
        opts.jobs.max(1)
    );
    if pending.is_empty() {
        return Ok(report);
    }

    trim_partial_line(&records_path)?;
    let mut sink = OpenOptions::new().create(true).append(true).open(&records_path)?;
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<CliResult<RunRecord>>();
    let jobs = opts.jobs.max(1).min(pending.len());
    let write_result = std::thread::scope(|scope| -> CliResult<()> {
        for _ in 0..jobs {
            let tx = tx.clone();
            let (next, pending, base, targets) = (&next, &pending, &base, &targets);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = pending.get(i) else { break };
                let r = run_cell(cfg, base, targets, cell).map(|(r, _)| r);
                if tx.send(r).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut first_err = None;
        for r in rx {
            match r {
                Ok(record) => {
                    let mut line = serde_json::to_string(&record)?;
                    line.push('\n');
                    sink.write_all(line.as_bytes())?;
                    sink.flush()?;
                    if record.status == RunStatus::Failed {
                        log::warn!("cell {:?} failed: {}", record.cell, record.error.as_deref().unwrap_or(""));
                        report.failed += 1;
                    } else {
                        log::debug!("cell {:?} loss {:?}", record.cell, record.loss);
                    }
                    report.executed += 1;
                    report.records.push(record);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                    next.store(usize::MAX / 2, Ordering::SeqCst);
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    });
    write_result?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(&format!(
            r#"{{"schema": 1, "problem": {{"n_plies": 4, "constraints": [{{"kind": "disorientation", "max_delta_deg": 45.0, "gamma": 0.25}}]}},
                "targets": {{"source": "inequivalent", "count": 2}}, "restarts": 2 {extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn grid_size_and_seed_sharing() {
        let c = cfg(r#", "grid": {"chi": [2, 4], "directions": ["inward", "outward"], "penalty": [true, false]}"#);
        let t = c.target_set().unwrap();
        let cells = grid_cells(&c, &t);
        assert_eq!(cells.len(), 2 * 2 * 2 * 2 * 2);
        let unique: BTreeSet<_> = cells.iter().collect();
        assert_eq!(unique.len(), cells.len());
        assert_eq!(init_seed(0, 1, 1), init_seed(0, 1, 1));
        assert_ne!(init_seed(0, 1, 0), init_seed(0, 0, 1));
    }

    #[test]
    fn records_are_self_consistent() {
        let c = cfg("");
        let base = c.base_problem().unwrap();
        let t = c.target_set().unwrap();
        for cell in grid_cells(&c, &t) {
            let (r, mps) = run_cell(&c, &base, &t, &cell).unwrap();
            assert_eq!(r.status, RunStatus::Ok);
            assert_eq!(mps.unwrap().max_bond(), 1);
            let p = base.with_target(t.targets[cell.target_id].point.clone()).unwrap();
            let seq = r.sequence.as_ref().unwrap();
            assert!((r.loss.unwrap() - p.loss(seq).unwrap()).abs() <= 1e-10);
            assert!((r.objective.unwrap() - r.final_expectation.unwrap()).abs() <= 1e-10);
            assert_eq!(r.trace.len(), c.grid.n_sweeps + 1);
        }
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RECORDS_FILE);
        let c = cfg("");
        let base = c.base_problem().unwrap();
        let t = c.target_set().unwrap();
        let cell = grid_cells(&c, &t)[0].clone();
        let (r, _) = run_cell(&c, &base, &t, &cell).unwrap();
        let line = serde_json::to_string(&r).unwrap();
        fs::write(&path, format!("{line}\n{}", &line[..40])).unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 1);
        trim_partial_line(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{line}\n"));
    }
}
