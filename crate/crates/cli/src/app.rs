//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use ssr_core::dmrg::SweepDirection;
use ssr_core::oracle::{exhaustive_min, OracleResult};
use ssr_core::qubit::{pauli_expand, term_census};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{self, CellKey, RunOptions, CONFIG_FILE, RECORDS_FILE, TARGETS_FILE};
use crate::summary::{reference_minima, summarize};

#[derive(Debug, Parser)]
#[command(name = "ssr", version, about = "Stacking sequence retrieval with tensor networks")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Grid cells run in parallel.
    #[arg(long, global = true, value_name = "INT")]
    pub jobs: Option<usize>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Skip cells already recorded in the output directory.
    #[arg(long, global = true)]
    pub resume: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run DMRG on a single target.
    Solve {
        #[arg(long, default_value_t = 0)]
        target: usize,
        #[arg(long, default_value_t = 0)]
        restart: usize,
        #[arg(long)]
        chi: Option<usize>,
        #[arg(long)]
        direction: Option<SweepDirection>,
        #[arg(long)]
        sweeps: Option<usize>,
        /// Optimize the loss alone, ignoring the configured constraints.
        #[arg(long)]
        no_penalty: bool,
    },
    /// Run the full grid of the config.
    Experiment,
    /// Exhaustive minimum for each target.
    Oracle {
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        no_penalty: bool,
    },
    /// Generate the config's target set.
    Targets,
    /// Pauli-Z expansion of one target's cost.
    Pauli {
        #[arg(long, default_value_t = 0)]
        target: usize,
        /// Include disorientation penalties.
        #[arg(long)]
        disorientation: bool,
    },
    /// Summary table of an experiment directory.
    Summarize {
        /// Experiment directory (defaults to --out).
        dir: Option<PathBuf>,
    },
}

fn init_logging() {
    let filter = std::env::var("SSR_LOG").unwrap_or_else(|_| "info".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, file: &str, body: &str) -> CliResult<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file);
            fs::write(&path, body)?;
            log::info!("wrote {}", path.display());
        }
        None => println!("{body}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleEntry {
    target_id: usize,
    #[serde(flatten)]
    result: OracleResult,
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    if cli.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    if let Command::Summarize { dir } = &cli.command {
        let dir = dir
            .clone()
            .or_else(|| cli.out.clone())
            .ok_or_else(|| CliError::Usage("summarize needs a directory".into()))?;
        return summarize_dir(&dir);
    }
    let cfg = load_config(cli)?;
    let out = cfg.out_dir.clone();
    match &cli.command {
        Command::Experiment => {
            let out = out.ok_or_else(|| CliError::Usage("experiment needs --out DIR or out_dir".into()))?;
            let report = runner::run_experiment(
                &cfg,
                &out,
                RunOptions {
                    jobs: cli.jobs.unwrap_or(1),
                    resume: cli.resume,
                },
            )?;
            log::info!(
                "{} cells: {} run, {} skipped, {} failed",
                report.total_cells,
                report.executed,
                report.skipped,
                report.failed
            );
            summarize_dir(&out)
        }
        Command::Solve {
            target,
            restart,
            chi,
            direction,
            sweeps,
            no_penalty,
        } => {
            let mut cfg = cfg.clone();
            if let Some(s) = sweeps {
                cfg.grid.n_sweeps = *s;
            }
            let cell = CellKey {
                target_id: *target,
                restart: *restart,
                chi: chi.or(cfg.grid.chi.first().copied()).unwrap_or(8),
                direction: direction
                    .or(cfg.grid.directions.first().copied())
                    .unwrap_or(SweepDirection::Alternating),
                penalty: !no_penalty,
            };
            let base = cfg.base_problem()?;
            let targets = cfg.target_set()?;
            let (record, mps) = runner::run_cell(&cfg, &base, &targets, &cell)?;
            if let (Some(dir), Some(mps)) = (&out, &mps) {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("mps.json"), mps.to_json_string()?)?;
                let trace = ssr_core::dmrg::SweepTrace {
                    records: record.trace.clone(),
                };
                fs::write(dir.join("trace.jsonl"), trace.to_jsonl()?)?;
            }
            emit(out.as_deref(), "record.json", &serde_json::to_string_pretty(&record)?)?;
            if record.status == runner::RunStatus::Failed {
                return Err(CliError::Runtime(record.error.unwrap_or_default()));
            }
            Ok(())
        }
        Command::Oracle { target, no_penalty } => {
            let base = cfg.base_problem()?;
            let targets = cfg.target_set()?;
            let mut entries = Vec::new();
            for t in &targets.targets {
                if target.is_some_and(|k| k != t.id) {
                    continue;
                }
                let p = base.with_target(t.point.clone())?;
                let p = if *no_penalty { p.with_constraints(vec![])? } else { p };
                entries.push(OracleEntry {
                    target_id: t.id,
                    result: exhaustive_min(&p, !no_penalty)?,
                });
            }
            if let Some(k) = target {
                if entries.is_empty() {
                    return Err(CliError::Usage(format!("no target with id {k}")));
                }
            }
            emit(out.as_deref(), "oracle.json", &serde_json::to_string_pretty(&entries)?)
        }
        Command::Targets => {
            let targets = cfg.target_set()?;
            emit(out.as_deref(), TARGETS_FILE, &targets.to_json_string()?)
        }
        Command::Pauli { target, disorientation } => {
            let base = cfg.base_problem()?;
            let targets = cfg.target_set()?;
            let t = targets
                .targets
                .iter()
                .find(|t| t.id == *target)
                .ok_or_else(|| CliError::Usage(format!("no target with id {target}")))?;
            let e = pauli_expand(&base.with_target(t.point.clone())?, *disorientation)?;
            let c = term_census(&e);
            log::info!(
                "{} terms, weights {:?}, {} CNOTs, {} rotations",
                c.terms,
                &c.by_weight[1.min(c.by_weight.len())..],
                c.cnots,
                c.rotations
            );
            emit(out.as_deref(), "pauli.json", &e.to_json_list()?)
        }
        Command::Summarize { .. } => unreachable!("handled above"),
    }
}

fn summarize_dir(dir: &Path) -> CliResult<()> {
    let cfg_path = dir.join(CONFIG_FILE);
    if !cfg_path.exists() {
        return Err(CliError::Usage(format!("{} has no {CONFIG_FILE}", dir.display())));
    }
    let cfg = ExperimentConfig::from_json_str(&fs::read_to_string(&cfg_path)?)?;
    let targets_path = dir.join(TARGETS_FILE);
    let targets = if targets_path.exists() {
        ssr_core::targets::TargetSet::from_json_str(&fs::read_to_string(&targets_path)?)?
    } else {
        cfg.target_set()?
    };
    let records = runner::read_records(&dir.join(RECORDS_FILE))?;
    let refs = reference_minima(&cfg, &targets)?;
    let summary = summarize(&records, &refs)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(dir.join("summary.csv"), summary.to_csv())?;
    print!("{}", summary.to_table());
    Ok(())
}
