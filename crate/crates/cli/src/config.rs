//! Experiment configuration: a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssr_core::dmrg::{DmrgPlan, SweepDirection};
use ssr_core::targets::{inequivalent_targets, kde_uniform_targets, TargetSet};
use ssr_core::{AngleSet, ConstraintSpec, LaminationPoint, SsrProblem};

use crate::error::{CliError, CliResult};

fn default_angles() -> Vec<f64> {
    vec![0.0, 45.0, 90.0, -45.0]
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub n_plies: usize,
    #[serde(default = "default_angles")]
    pub angles_deg: Vec<f64>,
    #[serde(default = "yes")]
    pub symmetric: bool,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
}

impl ProblemConfig {
    pub fn build(&self, target: Option<LaminationPoint>) -> CliResult<SsrProblem> {
        let angles = AngleSet::new(self.angles_deg.clone())?;
        let target = target.unwrap_or_else(|| LaminationPoint::zeros(self.symmetric));
        Ok(SsrProblem::new(angles, self.n_plies, self.symmetric, target, self.constraints.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSource {
    Inequivalent {
        count: usize,
    },
    Kde {
        count: usize,
        n_samples: usize,
    },
    File {
        path: PathBuf,
    },
    Points {
        points: Vec<LaminationPoint>,
    },
}

fn default_chi() -> Vec<usize> {
    vec![8]
}

fn default_directions() -> Vec<SweepDirection> {
    vec![SweepDirection::Alternating]
}

fn default_sweeps() -> usize {
    10
}

fn default_penalty() -> Vec<bool> {
    vec![true]
}

fn default_tol() -> f64 {
    1e-10
}

fn default_small() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_chi")]
    pub chi: Vec<usize>,
    #[serde(default = "default_directions")]
    pub directions: Vec<SweepDirection>,
    #[serde(default = "default_sweeps")]
    pub n_sweeps: usize,
    #[serde(default = "yes")]
    pub collapse: bool,
    /// Whether the configured constraints enter the optimized operator.
    #[serde(default = "default_penalty")]
    pub penalty: Vec<bool>,
    #[serde(default = "default_tol")]
    pub eig_tol: f64,
    #[serde(default = "default_small")]
    pub eig_max_iter: usize,
    #[serde(default = "default_small")]
    pub eig_krylov_dim: usize,
    #[serde(default)]
    pub svd_cutoff: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl GridConfig {
    pub fn plan(&self, chi: usize, direction: SweepDirection, seed: u64) -> CliResult<DmrgPlan> {
        let mut plan = DmrgPlan::new(self.n_sweeps, direction, chi, self.collapse)?;
        plan.eig_tol = self.eig_tol;
        plan.eig_max_iter = self.eig_max_iter;
        plan.eig_krylov_dim = self.eig_krylov_dim;
        plan.svd_cutoff = self.svd_cutoff;
        plan.seed = seed;
        plan.validate()?;
        Ok(plan)
    }

    pub fn n_cells_per_restart(&self) -> usize {
        self.chi.len() * self.directions.len() * self.penalty.len()
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub problem: ProblemConfig,
    pub targets: TargetSource,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "one")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    /// Compare against the exhaustive oracle in summaries when the search space allows.
    #[serde(default = "yes")]
    pub oracle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative target file paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        if let TargetSource::File { path: p } = &mut cfg.targets {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema != 1 {
            return Err(CliError::Usage(format!("unsupported config schema {}", self.schema)));
        }
        self.problem.build(None).map_err(|e| CliError::Usage(e.to_string()))?;
        if self.grid.chi.contains(&0) {
            return Err(CliError::Usage("bond dimensions must be positive".into()));
        }
        if let TargetSource::File { path } = &self.targets {
            if !path.exists() {
                return Err(CliError::Usage(format!("target file {} does not exist", path.display())));
            }
        }
        if let Some(&chi) = self.grid.chi.first() {
            if let Some(&dir) = self.grid.directions.first() {
                self.grid.plan(chi, dir, 0).map_err(|e| CliError::Usage(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn base_problem(&self) -> CliResult<SsrProblem> {
        self.problem.build(None)
    }

    pub fn target_set(&self) -> CliResult<TargetSet> {
        let base = self.base_problem()?;
        let set = match &self.targets {
            TargetSource::Inequivalent { count } => inequivalent_targets(&base, *count, self.seed)?,
            TargetSource::Kde { count, n_samples } => kde_uniform_targets(&base, *n_samples, *count, self.seed)?,
            TargetSource::File { path } => {
                let text = std::fs::read_to_string(path)?;
                TargetSet::from_json_str(&text)?
            }
            TargetSource::Points { points } => TargetSet {
                schema: 1,
                targets: points
                    .iter()
                    .enumerate()
                    .map(|(id, p)| ssr_core::targets::Target {
                        id,
                        point: p.clone(),
                        witness: None,
                    })
                    .collect(),
                provenance: ssr_core::targets::Provenance {
                    method: "points".into(),
                    seed: self.seed,
                    n_plies: base.n_plies(),
                    angles_deg: base.angle_set().degrees().to_vec(),
                    symmetric: base.is_symmetric(),
                    sample_count: None,
                    bandwidth: None,
                    kept_dimensions: None,
                },
            },
        };
        set.verify(&base)?;
        Ok(set)
    }

    /// Hash of everything that determines the results; `out_dir` is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"schema": 1, "problem": {"n_plies": 6}, "targets": {"source": "inequivalent", "count": 3}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.grid.chi, vec![8]);
        assert_eq!(c.grid.eig_max_iter, 3);
        assert_eq!(c.restarts, 1);
        assert!(c.problem.symmetric);
        assert_eq!(c.target_set().unwrap().len(), 3);
    }

    #[test]
    fn hash_ignores_out_dir_and_key_order() {
        let a = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let mut b = ExperimentConfig::from_json_str(
            r#"{"targets": {"count": 3, "source": "inequivalent"}, "problem": {"n_plies": 6}, "schema": 1}"#,
        )
        .unwrap();
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"schema": 2, "problem": {"n_plies": 6}, "targets": {"source": "inequivalent", "count": 3}}"#,
            r#"{"schema": 1, "problem": {"n_plies": 0}, "targets": {"source": "inequivalent", "count": 3}}"#,
            r#"{"schema": 1, "problem": {"n_plies": 6}, "targets": {"source": "file", "path": "/nonexistent/t.json"}}"#,
            r#"{"schema": 1, "problem": {"n_plies": 6}, "targets": {"source": "inequivalent", "count": 3}, "grid": {"chi": [0]}}"#,
            r#"{"schema": 1, "problem": {"n_plies": 6}, "targets": {"source": "inequivalent", "count": 3}, "extra": 1}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json_str(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
