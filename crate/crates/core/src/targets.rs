//! Target generation: symmetry-inequivalent exact targets and
//! density-flattened samples of reachable lamination points.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::laminate::{orbit_representative, ConstraintSpec, LaminationPoint, SsrProblem, StackingSequence};
use crate::oracle::enumerate_valid;

/// Largest search space enumerated exhaustively for orbit discovery.
const ENUMERATION_LIMIT: f64 = 1e6;
const REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: usize,
    pub point: LaminationPoint,
    pub witness: Option<StackingSequence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub seed: u64,
    pub n_plies: usize,
    pub angles_deg: Vec<f64>,
    pub symmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_dimensions: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub schema: u32,
    pub targets: Vec<Target>,
    pub provenance: Provenance,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Check every witness against `problem`: exact reproduction and no violations.
    pub fn verify(&self, problem: &SsrProblem) -> Result<()> {
        for t in &self.targets {
            t.point.validate()?;
            if t.point.is_symmetric() != problem.is_symmetric() {
                return Err(SsrError::Domain(format!("target {} has the wrong block layout", t.id)));
            }
            if let Some(w) = &t.witness {
                let v = problem.lamination_parameters(w)?;
                if v.squared_distance(&t.point) > 1e-20 {
                    return Err(SsrError::Domain(format!("witness of target {} does not reproduce it", t.id)));
                }
                if !problem.is_feasible(w) {
                    return Err(SsrError::Domain(format!("witness of target {} violates a constraint", t.id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let set: TargetSet = serde_json::from_str(s)?;
        if set.schema != 1 {
            return Err(SsrError::Domain(format!("unsupported target schema {}", set.schema)));
        }
        Ok(set)
    }
}

fn provenance(problem: &SsrProblem, method: &str, seed: u64) -> Provenance {
    Provenance {
        method: method.into(),
        seed,
        n_plies: problem.n_plies(),
        angles_deg: problem.angle_set().degrees().to_vec(),
        symmetric: problem.is_symmetric(),
        sample_count: None,
        bandwidth: None,
        kept_dimensions: None,
    }
}

/// Ordered label pairs (0-based) that may sit next to each other under all
/// disorientation constraints of `problem`.
fn allowed_transitions(problem: &SsrProblem) -> Vec<Vec<bool>> {
    let d = problem.d();
    let mut allowed = vec![vec![true; d]; d];
    for c in problem.constraints() {
        if let ConstraintSpec::Disorientation { max_delta_deg, .. } = *c {
            for (a, b) in ConstraintSpec::violation_pairs(problem.angle_set(), max_delta_deg) {
                allowed[a - 1][b - 1] = false;
            }
        }
    }
    allowed
}

/// Draw labels one at a time, uniform over those compatible with the previous
/// label; remaining constraint kinds are enforced by rejection.
pub fn random_valid_sequence_with<R: Rng>(problem: &SsrProblem, rng: &mut R) -> Result<StackingSequence> {
    let (d, n) = (problem.d(), problem.n_plies());
    let allowed = allowed_transitions(problem);
    for _ in 0..REJECTION_ATTEMPTS {
        let mut idx: Vec<usize> = Vec::with_capacity(n);
        let mut choices: Vec<usize> = Vec::with_capacity(d);
        for k in 0..n {
            choices.clear();
            if k == 0 {
                choices.extend(0..d);
            } else {
                let prev = idx[k - 1];
                choices.extend((0..d).filter(|&s| allowed[prev][s]));
            }
            if choices.is_empty() {
                return Err(SsrError::Generation(format!(
                    "no admissible label after label {}",
                    idx[k - 1] + 1
                )));
            }
            idx.push(choices[rng.random_range(0..choices.len())]);
        }
        let seq = StackingSequence::from_indices(&idx);
        if problem.is_feasible(&seq) {
            return Ok(seq);
        }
    }
    Err(SsrError::Generation(format!(
        "no valid sequence found in {REJECTION_ATTEMPTS} attempts"
    )))
}

pub fn random_valid_sequence(problem: &SsrProblem, seed: u64) -> Result<StackingSequence> {
    random_valid_sequence_with(problem, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `count` exact targets whose witnesses lie in pairwise distinct dihedral orbits.
pub fn inequivalent_targets(problem: &SsrProblem, count: usize, seed: u64) -> Result<TargetSet> {
    let angles = problem.angle_set();
    angles.dihedral_group()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = (problem.d() as f64).powi(problem.n_plies() as i32);

    let mut reps: Vec<StackingSequence> = if space <= ENUMERATION_LIMIT {
        let set: BTreeSet<StackingSequence> = enumerate_valid(problem)
            .map(|s| orbit_representative(&s, angles))
            .collect::<Result<_>>()?;
        if set.len() < count {
            return Err(SsrError::Refused(format!(
                "only {} inequivalent valid sequences exist, {count} requested",
                set.len()
            )));
        }
        set.into_iter().collect()
    } else {
        let mut set = BTreeSet::new();
        let mut found = Vec::new();
        let budget = count.saturating_mul(1000).max(10_000);
        for _ in 0..budget {
            if found.len() == count {
                break;
            }
            let s = random_valid_sequence_with(problem, &mut rng)?;
            let r = orbit_representative(&s, angles)?;
            if set.insert(r.clone()) {
                found.push(r);
            }
        }
        if found.len() < count {
            return Err(SsrError::Refused(format!(
                "random search found {} inequivalent sequences, {count} requested",
                found.len()
            )));
        }
        found
    };
    reps.shuffle(&mut rng);
    reps.truncate(count);

    let targets = reps
        .into_iter()
        .enumerate()
        .map(|(id, w)| {
            Ok(Target {
                id,
                point: problem.lamination_parameters(&w)?,
                witness: Some(w),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetSet {
        schema: 1,
        targets,
        provenance: provenance(problem, "inequivalent", seed),
    })
}

/// Per-dimension Scott bandwidth `σ_j m^(-1/(k+4))` over the dimensions with
/// nonzero spread; returns `(kept dimension indices, bandwidths)`.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    let m = points.len();
    if m < 2 {
        return Err(SsrError::Refused("density estimation needs at least two points".into()));
    }
    let dim = points[0].len();
    let mut kept = Vec::new();
    let mut sigma = Vec::new();
    for j in 0..dim {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / m as f64;
        let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let sd = var.sqrt();
        if sd > 1e-12 {
            kept.push(j);
            sigma.push(sd);
        }
    }
    if kept.is_empty() {
        return Err(SsrError::Refused("all sample points coincide; density is degenerate".into()));
    }
    let factor = (m as f64).powf(-1.0 / (kept.len() as f64 + 4.0));
    Ok((kept, sigma.into_iter().map(|s| s * factor).collect()))
}

/// Gaussian product-kernel density at every sample point.
pub fn kde_density(points: &[Vec<f64>], kept: &[usize], bandwidth: &[f64]) -> Vec<f64> {
    let m = points.len();
    let norm: f64 = bandwidth
        .iter()
        .map(|h| h * (2.0 * std::f64::consts::PI).sqrt())
        .product();
    let reduced: Vec<Vec<f64>> = points
        .iter()
        .map(|p| kept.iter().zip(bandwidth).map(|(&j, h)| p[j] / h).collect())
        .collect();
    let mut density = vec![0.0; m];
    for i in 0..m {
        let mut acc = 1.0; // self term
        for k in i + 1..m {
            let r2: f64 = reduced[i]
                .iter()
                .zip(&reduced[k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let w = (-0.5 * r2).exp();
            acc += w;
            density[k] += w;
        }
        density[i] += acc;
    }
    density.iter().map(|v| v / (m as f64 * norm)).collect()
}

/// Weighted sampling without replacement by exponential keys; returns indices
/// in selection order.
pub fn weighted_sample_without_replacement<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > weights.len() {
        return Err(SsrError::Domain(format!("cannot draw {k} of {} items", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(SsrError::Numeric("sampling weights must be positive and finite".into()));
    }
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (-u.ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(keys.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Draw `n_samples` valid sequences and keep `n_targets` of them with
/// probability proportional to the inverse estimated density.
pub fn kde_uniform_targets(problem: &SsrProblem, n_samples: usize, n_targets: usize, seed: u64) -> Result<TargetSet> {
    if n_targets > n_samples {
        return Err(SsrError::Domain(format!("{n_targets} targets from {n_samples} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut witnesses = Vec::with_capacity(n_samples);
    let mut points = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let s = random_valid_sequence_with(problem, &mut rng)?;
        let lp = problem.lamination_parameters(&s)?;
        points.push(lp.to_vec());
        witnesses.push((s, lp));
    }
    let (kept, bandwidth) = scott_bandwidth(&points)?;
    let density = kde_density(&points, &kept, &bandwidth);
    let weights: Vec<f64> = density.iter().map(|p| 1.0 / p).collect();
    let chosen = weighted_sample_without_replacement(&weights, n_targets, &mut rng)?;
    let targets = chosen
        .into_iter()
        .enumerate()
        .map(|(id, i)| Target {
            id,
            point: witnesses[i].1.clone(),
            witness: Some(witnesses[i].0.clone()),
        })
        .collect();
    let mut prov = provenance(problem, "kde", seed);
    prov.sample_count = Some(n_samples);
    prov.bandwidth = Some(bandwidth);
    prov.kept_dimensions = Some(kept);
    Ok(TargetSet {
        schema: 1,
        targets,
        provenance: prov,
    })
}
