//! Two-site DMRG over a sum of diagonal MPO terms.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eigen::{lanczos, Eigenpair, LanczosOptions};
use crate::error::{domain, Result, SsrError};
use crate::laminate::{SsrProblem, StackingSequence};
use crate::mpo::{DiagonalMpo, MpoSum};
use crate::mps::{rebuild_environments, Environment, Mps};
use crate::tensor::{gemm, svd_matrix, TruncationPolicy};

/// Sweep orientation. `Outward` runs from the first site to the last,
/// `Inward` from the last to the first, `Alternating` does both per sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDirection {
    Outward,
    Inward,
    Alternating,
}

impl SweepDirection {
    pub fn name(self) -> &'static str {
        match self {
            SweepDirection::Outward => "outward",
            SweepDirection::Inward => "inward",
            SweepDirection::Alternating => "alternating",
        }
    }
}

impl std::str::FromStr for SweepDirection {
    type Err = SsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outward" => Ok(Self::Outward),
            "inward" => Ok(Self::Inward),
            "alternating" => Ok(Self::Alternating),
            other => domain(format!("unknown sweep direction {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmrgPlan {
    pub n_sweeps: usize,
    pub direction: SweepDirection,
    pub chi_max: usize,
    pub collapse: bool,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub eig_krylov_dim: usize,
    pub svd_cutoff: f64,
    pub seed: u64,
}

impl DmrgPlan {
    pub fn new(n_sweeps: usize, direction: SweepDirection, chi_max: usize, collapse: bool) -> Result<Self> {
        let plan = Self {
            n_sweeps,
            direction,
            chi_max,
            collapse,
            eig_tol: 1e-10,
            eig_max_iter: 3,
            eig_krylov_dim: 3,
            svd_cutoff: 0.0,
            seed: 0,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Number of trailing sweeps used by the collapse schedule.
    pub fn collapse_len(&self) -> usize {
        let mut bits = 0;
        while (1usize << bits) < self.chi_max {
            bits += 1;
        }
        bits + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps < 1 {
            return domain("at least one sweep is required");
        }
        if self.chi_max < 1 {
            return domain("chi_max must be at least 1");
        }
        if self.collapse && self.n_sweeps <= self.collapse_len() {
            return domain(format!(
                "collapse needs more than {} sweeps for chi_max {}",
                self.collapse_len(),
                self.chi_max
            ));
        }
        if !(self.eig_tol > 0.0) || self.eig_max_iter < 1 || self.eig_krylov_dim < 2 {
            return domain("invalid eigensolver settings");
        }
        if !(0.0..1.0).contains(&self.svd_cutoff) {
            return domain(format!("svd cutoff {} outside [0, 1)", self.svd_cutoff));
        }
        Ok(())
    }

    /// Bond cap and relative cutoff for sweep `i` (0-based).
    pub fn schedule(&self, i: usize) -> (usize, f64) {
        if !self.collapse {
            return (self.chi_max, self.svd_cutoff);
        }
        let k = self.collapse_len();
        let start = self.n_sweeps - k;
        if i < start {
            (self.chi_max, self.svd_cutoff)
        } else if i + 1 == self.n_sweeps {
            (1, 0.5)
        } else {
            let j = i - start + 1;
            ((self.chi_max >> j).max(1), self.svd_cutoff)
        }
    }

    pub fn is_collapse_sweep(&self, i: usize) -> bool {
        self.collapse && i >= self.n_sweeps - self.collapse_len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub expectation: f64,
    pub chi: usize,
    pub chi_cap: usize,
    pub cutoff: f64,
    pub duration_ms: f64,
    pub lambda_min: Option<f64>,
    /// Largest `λ_local − ⟨Θ|H_eff|Θ⟩` over the sweep's updates.
    pub max_rayleigh_gap: Option<f64>,
    pub norm_drift: f64,
    pub discarded_weight: f64,
    pub matvecs: usize,
    pub unconverged: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTrace {
    pub records: Vec<SweepRecord>,
}

#[derive(Serialize)]
struct CanonicalRecord<'a> {
    sweep: usize,
    expectation: f64,
    chi: usize,
    chi_cap: usize,
    cutoff: f64,
    lambda_min: Option<f64>,
    max_rayleigh_gap: Option<f64>,
    norm_drift: f64,
    discarded_weight: f64,
    matvecs: usize,
    unconverged: usize,
    #[serde(skip)]
    _p: std::marker::PhantomData<&'a ()>,
}

impl SweepTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line, including wall-clock durations.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// As [`SweepTrace::to_jsonl`] without the timing field, so equal runs
    /// serialize to equal bytes.
    pub fn to_canonical_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let c = CanonicalRecord {
                sweep: r.sweep,
                expectation: r.expectation,
                chi: r.chi,
                chi_cap: r.chi_cap,
                cutoff: r.cutoff,
                lambda_min: r.lambda_min,
                max_rayleigh_gap: r.max_rayleigh_gap,
                norm_drift: r.norm_drift,
                discarded_weight: r.discarded_weight,
                matvecs: r.matvecs,
                unconverged: r.unconverged,
                _p: std::marker::PhantomData,
            };
            out.push_str(&serde_json::to_string(&c)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn final_expectation(&self) -> Option<f64> {
        self.records.last().map(|r| r.expectation)
    }
}

#[derive(Clone, Debug)]
pub struct DmrgOutcome {
    pub mps: Mps,
    pub sequence: Option<StackingSequence>,
    pub trace: SweepTrace,
}

/// Which way the orthogonality center leaves a two-site block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Right,
    Left,
}

#[derive(Clone, Debug)]
pub struct LocalUpdate {
    pub lambda: f64,
    pub rayleigh: f64,
    pub discarded_weight: f64,
    pub matvecs: usize,
    pub converged: bool,
    pub bond: usize,
}

/// Nonzero entries of `W[n]_{s1} W[n+1]_{s2}` as `(b_left, b_right, s1*d+s2, value)`.
fn pair_kernel(term: &DiagonalMpo, n: usize) -> Vec<(usize, usize, usize, f64)> {
    let d = term.d();
    let (b0, b1, b2) = (term.bonds()[n], term.bonds()[n + 1], term.bonds()[n + 2]);
    let mut out = Vec::new();
    for i in 0..b0 {
        for k in 0..b2 {
            for s1 in 0..d {
                for s2 in 0..d {
                    let mut v = 0.0;
                    for j in 0..b1 {
                        let a = term.entry(n, i, j, s1);
                        if a != 0.0 {
                            v += a * term.entry(n + 1, j, k, s2);
                        }
                    }
                    if v != 0.0 {
                        out.push((i, k, s1 * d + s2, v));
                    }
                }
            }
        }
    }
    out
}

/// Matrix-free two-site effective operator at sites `(n, n+1)`.
pub struct EffectiveOperator<'a> {
    chl: usize,
    chr: usize,
    dd: usize,
    parts: Vec<Part<'a>>,
    y: Vec<f64>,
    z: Vec<f64>,
}

struct Part<'a> {
    left: &'a [f64],
    right: &'a [f64],
    bl: usize,
    br: usize,
    kernel: Vec<(usize, usize, usize, f64)>,
    used_right: Vec<bool>,
}

impl<'a> EffectiveOperator<'a> {
    pub fn new(env: &'a Environment, mps: &Mps, terms: &MpoSum, n: usize) -> Result<Self> {
        let d = mps.d();
        let (chl, chr) = (mps.bonds()[n], mps.bonds()[n + 2]);
        let mut parts = Vec::with_capacity(terms.len());
        let mut max_b = 1;
        for (t, term) in terms.terms().iter().enumerate() {
            let left = env
                .left(t, n)
                .ok_or_else(|| SsrError::Shape(format!("left environment {n} missing")))?;
            let right = env
                .right(t, n + 2)
                .ok_or_else(|| SsrError::Shape(format!("right environment {} missing", n + 2)))?;
            let (bl, br) = (term.bonds()[n], term.bonds()[n + 2]);
            if left.len() != bl * chl * chl || right.len() != br * chr * chr {
                return Err(SsrError::Shape("environment does not match the current gauge".into()));
            }
            let kernel = pair_kernel(term, n);
            let mut used_right = vec![false; br];
            for &(_, k, _, _) in &kernel {
                used_right[k] = true;
            }
            max_b = max_b.max(bl).max(br);
            parts.push(Part {
                left,
                right,
                bl,
                br,
                kernel,
                used_right,
            });
        }
        let block = chl * d * d * chr;
        Ok(Self {
            chl,
            chr,
            dd: d * d,
            parts,
            y: vec![0.0; max_b * block],
            z: vec![0.0; max_b * block],
        })
    }

    pub fn dim(&self) -> usize {
        self.chl * self.dd * self.chr
    }

    pub fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        let (chl, chr, dd) = (self.chl, self.chr, self.dd);
        let block = chl * dd * chr;
        out.iter_mut().for_each(|v| *v = 0.0);
        for part in &self.parts {
            // Y_k = Θ · R_k
            for k in 0..part.br {
                if !part.used_right[k] {
                    continue;
                }
                gemm(
                    chl * dd,
                    chr,
                    chr,
                    1.0,
                    x,
                    (chr as isize, 1),
                    &part.right[k * chr * chr..(k + 1) * chr * chr],
                    (chr as isize, 1),
                    0.0,
                    &mut self.y[k * block..(k + 1) * block],
                    (chr as isize, 1),
                );
            }
            // Z_i[a, p, c] = Σ_k K_p[i, k] Y_k[a, p, c]
            self.z[..part.bl * block].iter_mut().for_each(|v| *v = 0.0);
            for &(i, k, p, v) in &part.kernel {
                let zi = &mut self.z[i * block..(i + 1) * block];
                let yk = &self.y[k * block..(k + 1) * block];
                for a in 0..chl {
                    let off = (a * dd + p) * chr;
                    for c in 0..chr {
                        zi[off + c] += v * yk[off + c];
                    }
                }
            }
            // out += L_i · Z_i
            for i in 0..part.bl {
                gemm(
                    chl,
                    chl,
                    dd * chr,
                    1.0,
                    &part.left[i * chl * chl..(i + 1) * chl * chl],
                    (chl as isize, 1),
                    &self.z[i * block..(i + 1) * block],
                    ((dd * chr) as isize, 1),
                    1.0,
                    out,
                    ((dd * chr) as isize, 1),
                );
            }
        }
    }

    /// Dense matrix of the operator; only for small test problems.
    pub fn to_dense(&mut self) -> Vec<f64> {
        let m = self.dim();
        let mut dense = vec![0.0; m * m];
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..m {
                dense[i * m + j] = col[i];
            }
        }
        dense
    }
}

/// Optimize the two-site block at `(n, n+1)`, split it under `policy`, and
/// leave the center on the side given by `mv`. Environments on the far side
/// of the move are refreshed.
pub fn local_update(
    mps: &mut Mps,
    env: &mut Environment,
    terms: &MpoSum,
    n: usize,
    policy: &TruncationPolicy,
    mv: Move,
    eig: &LanczosOptions,
) -> Result<LocalUpdate> {
    let d = mps.d();
    let (chl, chr) = (mps.bonds()[n], mps.bonds()[n + 2]);
    let theta = mps.two_site_block(n);
    let (pair, converged) = {
        let mut op = EffectiveOperator::new(env, mps, terms, n)?;
        if chl == 1 && chr == 1 {
            (dense_ground_state(&mut op, &theta)?, true)
        } else {
            lanczos(|x, y| op.apply(x, y), &theta, eig)?
        }
    };
    let nrm = pair.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(nrm.is_finite() && nrm > 0.0) {
        return Err(SsrError::Numeric(format!("local eigenvector of norm {nrm}")));
    }
    let unit: Vec<f64> = pair.vector.iter().map(|x| x / nrm).collect();
    let f = svd_matrix(chl * d, d * chr, &unit, policy)?;
    let k = f.rank;
    let (left, right, center) = match mv {
        Move::Right => {
            let mut right = f.vt;
            for (r, row) in right.chunks_mut(d * chr).enumerate() {
                row.iter_mut().for_each(|x| *x *= f.s[r]);
            }
            (f.u, right, n + 1)
        }
        Move::Left => {
            let mut left = f.u;
            for row in left.chunks_mut(k) {
                for (x, s) in row.iter_mut().zip(&f.s) {
                    *x *= s;
                }
            }
            (left, f.vt, n)
        }
    };
    mps.set_pair(n, left, right, k, center);
    match mv {
        Move::Right => env.update_left(mps, terms, n),
        Move::Left => env.update_right(mps, terms, n + 1),
    }
    Ok(LocalUpdate {
        lambda: pair.value,
        rayleigh: pair.start_rayleigh,
        discarded_weight: f.discarded_weight,
        matvecs: pair.matvecs,
        converged,
        bond: k,
    })
}

/// Exact solve for product-state blocks, where the operator is only `d^2` wide.
fn dense_ground_state(op: &mut EffectiveOperator, start: &[f64]) -> Result<Eigenpair> {
    let m = op.dim();
    let h = nalgebra::DMatrix::from_row_slice(m, m, &op.to_dense());
    let x = nalgebra::DVector::from_column_slice(start);
    let nrm2 = x.norm_squared();
    if !(nrm2 > 0.0) {
        return Err(SsrError::Numeric("zero two-site block".into()));
    }
    let start_rayleigh = x.dot(&(&h * &x)) / nrm2;
    let eig = nalgebra::SymmetricEigen::try_new(h, f64::EPSILON, 0)
        .ok_or_else(|| SsrError::Numeric("dense local eigensolve failed".into()))?;
    let (k, value) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty block");
    Ok(Eigenpair {
        value,
        vector: eig.eigenvectors.column(k).iter().copied().collect(),
        residual: 0.0,
        matvecs: m,
        start_rayleigh,
    })
}

fn mix_seed(seed: u64, sweep: usize, bond: usize, pass: usize) -> u64 {
    let mut z = seed
        ^ (sweep as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (bond as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (pass as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Default)]
struct SweepStats {
    lambda_min: Option<f64>,
    max_gap: Option<f64>,
    discarded: f64,
    matvecs: usize,
    unconverged: usize,
}

impl SweepStats {
    fn absorb(&mut self, u: &LocalUpdate) {
        self.lambda_min = Some(self.lambda_min.map_or(u.lambda, |m| m.min(u.lambda)));
        let gap = u.lambda - u.rayleigh;
        self.max_gap = Some(self.max_gap.map_or(gap, |g| g.max(gap)));
        self.discarded += u.discarded_weight;
        self.matvecs += u.matvecs;
        if !u.converged {
            self.unconverged += 1;
        }
    }
}

fn gauge_to(mps: &mut Mps, env: &mut Environment, terms: &MpoSum, target: usize) {
    let mut c = mps.center().expect("canonical state");
    while c < target {
        mps.move_center_right(c);
        env.update_left(mps, terms, c);
        c += 1;
    }
    while c > target {
        mps.move_center_left(c);
        env.update_right(mps, terms, c);
        c -= 1;
    }
}

fn outward_pass(
    mps: &mut Mps,
    env: &mut Environment,
    terms: &MpoSum,
    policy: &TruncationPolicy,
    plan: &DmrgPlan,
    sweep: usize,
    stats: &mut SweepStats,
) -> Result<()> {
    let n_sites = mps.n_sites();
    for n in 0..n_sites - 1 {
        let eig = eig_options(plan, sweep, n, 0);
        let u = local_update(mps, env, terms, n, policy, Move::Right, &eig)?;
        stats.absorb(&u);
    }
    Ok(())
}

fn inward_pass(
    mps: &mut Mps,
    env: &mut Environment,
    terms: &MpoSum,
    policy: &TruncationPolicy,
    plan: &DmrgPlan,
    sweep: usize,
    stats: &mut SweepStats,
) -> Result<()> {
    let n_sites = mps.n_sites();
    for n in (0..n_sites - 1).rev() {
        let eig = eig_options(plan, sweep, n, 1);
        let u = local_update(mps, env, terms, n, policy, Move::Left, &eig)?;
        stats.absorb(&u);
    }
    Ok(())
}

fn eig_options(plan: &DmrgPlan, sweep: usize, bond: usize, pass: usize) -> LanczosOptions {
    LanczosOptions {
        tol: plan.eig_tol,
        max_iter: plan.eig_max_iter,
        krylov_dim: plan.eig_krylov_dim,
        seed: mix_seed(plan.seed, sweep, bond, pass),
    }
}

/// Run the full sweep schedule from `init`.
pub fn dmrg_run(problem: &SsrProblem, terms: &MpoSum, init: &Mps, plan: &DmrgPlan) -> Result<DmrgOutcome> {
    if init.n_sites() != problem.n_plies() || init.d() != problem.d() {
        return Err(SsrError::Shape(format!(
            "initial state has {} sites of dimension {}, problem needs {} of dimension {}",
            init.n_sites(),
            init.d(),
            problem.n_plies(),
            problem.d()
        )));
    }
    dmrg_run_terms(terms, init, plan)
}

/// [`dmrg_run`] without a problem description.
pub fn dmrg_run_terms(terms: &MpoSum, init: &Mps, plan: &DmrgPlan) -> Result<DmrgOutcome> {
    plan.validate()?;
    let n_sites = init.n_sites();
    if n_sites < 2 {
        return domain("two-site DMRG needs at least two sites");
    }
    if terms.is_empty() {
        return domain("no operator terms to minimize");
    }
    init.check_terms(terms)?;

    let mut mps = init.clone();
    mps.shift_center(0);
    mps.normalize()?;
    let mut trace = SweepTrace::default();
    trace.records.push(SweepRecord {
        sweep: 0,
        expectation: mps.expectation(terms)?,
        chi: mps.max_bond(),
        chi_cap: plan.chi_max,
        cutoff: plan.svd_cutoff,
        duration_ms: 0.0,
        lambda_min: None,
        max_rayleigh_gap: None,
        norm_drift: (mps.norm() - 1.0).abs(),
        discarded_weight: 0.0,
        matvecs: 0,
        unconverged: 0,
    });

    let start = match plan.direction {
        SweepDirection::Inward => n_sites - 2,
        _ => 0,
    };
    if start > 0 {
        mps.shift_center(start + 1);
    }
    let mut env = rebuild_environments(&mps, terms, start)?;

    for sweep in 0..plan.n_sweeps {
        let timer = Instant::now();
        let (cap, cutoff) = plan.schedule(sweep);
        let policy = TruncationPolicy {
            max_rank: cap,
            cutoff,
            renormalize: true,
        };
        let mut stats = SweepStats::default();
        let result = match plan.direction {
            SweepDirection::Outward => outward_pass(&mut mps, &mut env, terms, &policy, plan, sweep, &mut stats)
                .map(|_| gauge_to(&mut mps, &mut env, terms, 0)),
            SweepDirection::Inward => inward_pass(&mut mps, &mut env, terms, &policy, plan, sweep, &mut stats)
                .map(|_| gauge_to(&mut mps, &mut env, terms, n_sites - 1)),
            SweepDirection::Alternating => outward_pass(&mut mps, &mut env, terms, &policy, plan, sweep, &mut stats)
                .and_then(|_| inward_pass(&mut mps, &mut env, terms, &policy, plan, sweep, &mut stats)),
        };
        let expectation = result.and_then(|_| mps.expectation(terms));
        let expectation = match expectation {
            Ok(e) => e,
            Err(e) => {
                return Err(SsrError::Aborted {
                    sweep: sweep + 1,
                    reason: e.to_string(),
                    trace: Box::new(trace),
                })
            }
        };
        let elapsed = timer.elapsed().as_secs_f64() * 1e3;
        trace.records.push(SweepRecord {
            sweep: sweep + 1,
            expectation,
            chi: mps.max_bond(),
            chi_cap: cap,
            cutoff,
            duration_ms: elapsed,
            lambda_min: stats.lambda_min,
            max_rayleigh_gap: stats.max_gap,
            norm_drift: (mps.norm() - 1.0).abs(),
            discarded_weight: stats.discarded,
            matvecs: stats.matvecs,
            unconverged: stats.unconverged,
        });
    }

    let sequence = mps.extract_sequence().ok();
    Ok(DmrgOutcome { mps, sequence, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laminate::{AngleSet, ConstraintSpec, LaminationPoint};
    use crate::mpo::loss_mpo_sum;
    use crate::oracle::exhaustive_min;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn exact_problem(labels: &[usize], constraints: Vec<ConstraintSpec>) -> SsrProblem {
        let s = StackingSequence::new(labels.to_vec(), 4).unwrap();
        let base =
            SsrProblem::new(AngleSet::quad(), labels.len(), true, LaminationPoint::zeros(true), constraints).unwrap();
        base.with_target(base.lamination_parameters(&s).unwrap()).unwrap()
    }

    #[test]
    fn schedule_halves_to_one() {
        let plan = DmrgPlan::new(10, SweepDirection::Alternating, 32, true).unwrap();
        assert_eq!(plan.collapse_len(), 6);
        let caps: Vec<_> = (0..10).map(|i| plan.schedule(i)).collect();
        assert_eq!(
            caps,
            vec![(32, 0.0), (32, 0.0), (32, 0.0), (32, 0.0), (16, 0.0), (8, 0.0), (4, 0.0), (2, 0.0), (1, 0.0), (1, 0.5)]
        );
        assert!(DmrgPlan::new(6, SweepDirection::Alternating, 32, true).is_err());
        assert_eq!(DmrgPlan::new(3, SweepDirection::Inward, 1, true).unwrap().schedule(2), (1, 0.5));
        let p = DmrgPlan::new(5, SweepDirection::Inward, 6, true).unwrap();
        assert_eq!(p.collapse_len(), 4);
        assert_eq!((0..5).map(|i| p.schedule(i).0).collect::<Vec<_>>(), vec![6, 3, 1, 1, 1]);
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("inward".parse::<SweepDirection>().unwrap(), SweepDirection::Inward);
        assert!("sideways".parse::<SweepDirection>().is_err());
    }

    #[test]
    fn local_lambda_matches_dense_effective_matrix() {
        let p = exact_problem(&[1, 2, 4, 3], vec![ConstraintSpec::Disorientation { max_delta_deg: 45.0, gamma: 0.25 }]);
        let p = p
            .with_target(LaminationPoint::symmetric([0.1, 0.2, -0.3, 0.0], [0.4, -0.1, 0.0, 0.0]).unwrap())
            .unwrap();
        let terms = loss_mpo_sum(&p).unwrap();
        for center in 0..3 {
            let mut mps = Mps::random(4, 4, 4, 5).unwrap();
            mps.shift_center(center);
            let mut env = rebuild_environments(&mps, &terms, center).unwrap();
            let dense = {
                let mut op = EffectiveOperator::new(&env, &mps, &terms, center).unwrap();
                let m = op.dim();
                let a = op.to_dense();
                for i in 0..m {
                    for j in 0..i {
                        assert_abs_diff_eq!(a[i * m + j], a[j * m + i], epsilon = 1e-12);
                    }
                }
                SymmetricEigen::new(DMatrix::from_row_slice(m, m, &a)).eigenvalues.min()
            };
            let policy = TruncationPolicy::rank_only(64);
            let u = local_update(
                &mut mps,
                &mut env,
                &terms,
                center,
                &policy,
                Move::Right,
                &LanczosOptions {
                    max_iter: 2000,
                    krylov_dim: 300,
                    ..LanczosOptions::default()
                },
            )
            .unwrap();
            assert!(u.converged);
            assert_abs_diff_eq!(u.lambda, dense, epsilon = 1e-9);
            assert!(u.lambda >= -1e-12);
            assert!(u.lambda <= u.rayleigh + 1e-12);
            assert!(u.discarded_weight <= 1e-12);
        }
    }

    #[test]
    fn effective_operator_reproduces_energy() {
        let p = exact_problem(&[2, 2, 3, 4, 1], vec![]);
        let terms = loss_mpo_sum(&p).unwrap();
        let mut mps = Mps::random(5, 4, 3, 2).unwrap();
        let e = mps.expectation(&terms).unwrap();
        mps.shift_center(2);
        let env = rebuild_environments(&mps, &terms, 2).unwrap();
        let mut op = EffectiveOperator::new(&env, &mps, &terms, 2).unwrap();
        let theta = mps.two_site_block(2);
        let mut y = vec![0.0; theta.len()];
        op.apply(&theta, &mut y);
        let rq: f64 = theta.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(rq, e, epsilon = 1e-10);
    }

    fn run(p: &SsrProblem, chi: usize, dir: SweepDirection, sweeps: usize, collapse: bool, seed: u64) -> DmrgOutcome {
        let terms = loss_mpo_sum(p).unwrap();
        let init = Mps::random(p.n_plies(), 4, 2, seed).unwrap();
        let mut plan = DmrgPlan::new(sweeps, dir, chi, collapse).unwrap();
        plan.seed = seed;
        dmrg_run(p, &terms, &init, &plan).unwrap()
    }

    #[test]
    fn recovers_exact_target_at_six_plies() {
        let p = exact_problem(&[1, 2, 3, 3, 4, 2], vec![]);
        let best = (0..5)
            .map(|seed| {
                let out = run(&p, 32, SweepDirection::Alternating, 10, true, seed);
                let s = out.sequence.expect("collapsed");
                p.loss(&s).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best <= 1e-8, "best loss {best}");
    }

    #[test]
    fn trace_shape_and_invariants() {
        let p = exact_problem(&[1, 4, 4, 1, 2, 3], vec![ConstraintSpec::Disorientation { max_delta_deg: 45.0, gamma: 0.25 }]);
        for dir in [SweepDirection::Outward, SweepDirection::Inward, SweepDirection::Alternating] {
            let out = run(&p, 8, dir, 8, true, 3);
            assert_eq!(out.trace.len(), 9);
            assert_eq!(out.trace.records[0].lambda_min, None);
            for r in &out.trace.records[1..] {
                assert!(r.max_rayleigh_gap.unwrap() <= 1e-9);
                assert!(r.norm_drift <= 1e-10);
                assert!(r.lambda_min.unwrap() >= -1e-10);
            }
            let s = out.sequence.expect("collapsed");
            let last = out.trace.final_expectation().unwrap();
            assert_abs_diff_eq!(last, p.objective(&s).unwrap(), epsilon = 1e-10);
            assert_eq!(out.mps.max_bond(), 1);
        }
    }

    #[test]
    fn expectation_monotone_without_binding_cap() {
        let p = exact_problem(&[3, 2, 1, 1, 4, 4], vec![]);
        let p = p
            .with_target(LaminationPoint::symmetric([0.3, 0.1, -0.2, 0.0], [0.0, 0.5, 0.1, 0.0]).unwrap())
            .unwrap();
        for dir in [SweepDirection::Outward, SweepDirection::Inward, SweepDirection::Alternating] {
            let out = run(&p, 64, dir, 6, false, 1);
            for w in out.trace.records.windows(2) {
                assert!(w[1].expectation <= w[0].expectation + 1e-9);
            }
            assert!(out.sequence.is_none() || out.mps.max_bond() == 1);
        }
    }

    #[test]
    fn exact_representability_reaches_oracle_minimum() {
        let p = exact_problem(&[1, 1, 2, 3, 4, 4], vec![]);
        let p = p
            .with_target(LaminationPoint::symmetric([0.2, -0.1, 0.05, 0.0], [-0.3, 0.2, 0.1, 0.0]).unwrap())
            .unwrap();
        let oracle = exhaustive_min(&p, false).unwrap().min_loss;
        // a full-rank start keeps every basis state reachable from the first sweep
        let terms = loss_mpo_sum(&p).unwrap();
        let init = Mps::random(6, 4, 64, 0).unwrap();
        let mut plan = DmrgPlan::new(4, SweepDirection::Alternating, 64, false).unwrap();
        plan.eig_max_iter = 2000;
        plan.eig_krylov_dim = 200;
        let out = dmrg_run(&p, &terms, &init, &plan).unwrap();
        assert!(out.trace.final_expectation().unwrap() <= oracle + 1e-8);
    }

    #[test]
    fn bond_one_runs_end_in_basis_states() {
        let p = exact_problem(&[2, 3, 4, 1, 1, 2], vec![]);
        let out = run(&p, 1, SweepDirection::Alternating, 4, true, 7);
        assert!(out.mps.bonds().iter().all(|&b| b == 1));
        let s = out.sequence.unwrap();
        assert_abs_diff_eq!(out.trace.final_expectation().unwrap(), p.loss(&s).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn deterministic_traces() {
        let p = exact_problem(&[1, 2, 2, 3, 4, 1], vec![]);
        let a = run(&p, 16, SweepDirection::Alternating, 8, true, 9);
        let b = run(&p, 16, SweepDirection::Alternating, 8, true, 9);
        assert_eq!(a.trace.to_canonical_jsonl().unwrap(), b.trace.to_canonical_jsonl().unwrap());
        assert!(!a.trace.to_canonical_jsonl().unwrap().contains("duration_ms"));
        assert!(a.trace.to_jsonl().unwrap().contains("duration_ms"));
    }

    #[test]
    fn rejects_mismatched_init() {
        let p = exact_problem(&[1, 2, 3, 4], vec![]);
        let terms = loss_mpo_sum(&p).unwrap();
        let init = Mps::random(5, 4, 2, 0).unwrap();
        let plan = DmrgPlan::new(3, SweepDirection::Inward, 2, false).unwrap();
        assert!(matches!(dmrg_run(&p, &terms, &init, &plan), Err(SsrError::Shape(_))));
    }
}
