//! Ply-angle domain model.
//!
//! A stacking sequence is a list of ply labels `1..=d` into an [`AngleSet`].
//! Lamination parameters are weighted sums of the four trigonometric ply
//! functions `(cos 2θ, sin 2θ, cos 4θ, sin 4θ)`; the loss of a sequence is the
//! squared distance of its lamination parameters to a target point.
//!
//! Two weighting modes exist. The symmetric mode models one half of a
//! midplane-symmetric laminate with ply index `n` counted from the midplane,
//! so only the `A` and `D` blocks survive. The general mode keeps all three
//! blocks with ply positions `z_n = -N/2 + n`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, SsrError};

const ANGLE_EPS: f64 = 1e-9;

fn wrap_180(deg: f64) -> f64 {
    deg.rem_euclid(180.0)
}

/// Distance between two fiber orientations, using their 180° periodicity.
pub fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let delta = wrap_180(a - b);
    delta.min(180.0 - delta)
}

/// Ordered set of admissible ply angles in degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleSet {
    degrees: Vec<f64>,
    radians: Vec<f64>,
    ply_functions: Vec<[f64; 4]>,
    // step index k(s) with θ_s ≡ θ_1 + k(s)·180°/d (mod 180°), present when evenly spaced
    steps: Option<Vec<usize>>,
}

impl AngleSet {
    pub fn new(degrees: Vec<f64>) -> Result<Self> {
        if degrees.len() < 2 {
            return domain(format!("an angle set needs at least 2 angles, got {}", degrees.len()));
        }
        for &a in &degrees {
            if !a.is_finite() || a <= -90.0 || a > 90.0 {
                return domain(format!("ply angle {a} outside (-90, 90]"));
            }
        }
        for i in 0..degrees.len() {
            for j in 0..i {
                if circular_distance_deg(degrees[i], degrees[j]) < ANGLE_EPS {
                    return domain(format!("duplicate ply angle {}", degrees[i]));
                }
            }
        }
        let radians: Vec<f64> = degrees.iter().map(|a| a.to_radians()).collect();
        let ply_functions = radians
            .iter()
            .map(|&t| {
                [
                    (2.0 * t).cos(),
                    (2.0 * t).sin(),
                    (4.0 * t).cos(),
                    (4.0 * t).sin(),
                ]
            })
            .collect();
        let steps = even_steps(&degrees);
        Ok(Self {
            degrees,
            radians,
            ply_functions,
            steps,
        })
    }

    /// The common `{0°, +45°, 90°, -45°}` set.
    pub fn quad() -> Self {
        Self::new(vec![0.0, 45.0, 90.0, -45.0]).expect("valid angle set")
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn radians(&self) -> &[f64] {
        &self.radians
    }

    /// Angle of a 1-based label in degrees.
    pub fn angle(&self, label: usize) -> Result<f64> {
        self.check_label(label)?;
        Ok(self.degrees[label - 1])
    }

    /// Whether the angles form a regular grid of spacing 180°/d.
    pub fn is_evenly_spaced(&self) -> bool {
        self.steps.is_some()
    }

    pub fn spacing_deg(&self) -> f64 {
        180.0 / self.len() as f64
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label == 0 || label > self.len() {
            return domain(format!("ply label {label} outside 1..={}", self.len()));
        }
        Ok(())
    }

    /// `(cos 2θ_s, sin 2θ_s, cos 4θ_s, sin 4θ_s)` for label `s`.
    pub fn ply_functions(&self, label: usize) -> Result<[f64; 4]> {
        self.check_label(label)?;
        Ok(self.ply_functions[label - 1])
    }

    pub(crate) fn ply_function_table(&self) -> &[[f64; 4]] {
        &self.ply_functions
    }

    /// The dihedral group of label permutations preserving the angle grid:
    /// `d` rotations and `d` reflections.
    pub fn dihedral_group(&self) -> Result<Vec<DihedralElement>> {
        if self.steps.is_none() {
            return Err(SsrError::Unsupported(
                "dihedral symmetries need an evenly spaced angle set".into(),
            ));
        }
        let d = self.len();
        let mut group = Vec::with_capacity(2 * d);
        for reflect in [false, true] {
            for shift in 0..d {
                group.push(DihedralElement { shift, reflect });
            }
        }
        Ok(group)
    }
}

fn even_steps(degrees: &[f64]) -> Option<Vec<usize>> {
    let d = degrees.len();
    let spacing = 180.0 / d as f64;
    let mut seen = vec![false; d];
    let mut steps = Vec::with_capacity(d);
    for &a in degrees {
        let k = wrap_180(a - degrees[0]) / spacing;
        let rounded = k.round();
        if (k - rounded).abs() > 1e-9 {
            return None;
        }
        let k = (rounded as usize) % d;
        if seen[k] {
            return None;
        }
        seen[k] = true;
        steps.push(k);
    }
    Some(steps)
}

/// One element of the dihedral group acting on an evenly spaced angle set:
/// `θ ↦ ±θ + const`, expressed on grid steps as `k ↦ ±k + shift (mod d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DihedralElement {
    pub shift: usize,
    pub reflect: bool,
}

impl DihedralElement {
    pub fn identity() -> Self {
        Self {
            shift: 0,
            reflect: false,
        }
    }

    fn map_label(&self, angles: &AngleSet, steps: &[usize], label: usize) -> usize {
        let d = angles.len();
        let k = steps[label - 1];
        let k = if self.reflect { (d - k) % d } else { k };
        let target = (k + self.shift) % d;
        steps.iter().position(|&j| j == target).expect("complete step table") + 1
    }

    pub fn apply_to_sequence(
        &self,
        angles: &AngleSet,
        seq: &StackingSequence,
    ) -> Result<StackingSequence> {
        let steps = angles.steps.as_ref().ok_or_else(|| {
            SsrError::Unsupported("dihedral symmetries need an evenly spaced angle set".into())
        })?;
        let labels = seq
            .labels()
            .iter()
            .map(|&s| self.map_label(angles, steps, s))
            .collect();
        Ok(StackingSequence { labels })
    }

    /// The orthogonal map on lamination space matching this relabeling.
    pub fn apply_to_point(&self, angles: &AngleSet, point: &LaminationPoint) -> LaminationPoint {
        let base = angles.radians[0];
        let step = angles.spacing_deg().to_radians();
        let chi = if self.reflect {
            2.0 * base + self.shift as f64 * step
        } else {
            self.shift as f64 * step
        };
        let reflect = self.reflect;
        let map = |v: [f64; 4]| -> [f64; 4] {
            let v = if reflect {
                [v[0], -v[1], v[2], -v[3]]
            } else {
                v
            };
            let (s2, c2) = (2.0 * chi).sin_cos();
            let (s4, c4) = (4.0 * chi).sin_cos();
            [
                c2 * v[0] - s2 * v[1],
                s2 * v[0] + c2 * v[1],
                c4 * v[2] - s4 * v[3],
                s4 * v[2] + c4 * v[3],
            ]
        };
        LaminationPoint {
            a: map(point.a),
            b: point.b.map(map),
            d: map(point.d),
        }
    }
}

/// All sequences reachable from `seq` by dihedral relabelings.
pub fn symmetry_orbit(seq: &StackingSequence, angles: &AngleSet) -> Result<BTreeSet<StackingSequence>> {
    let mut orbit = BTreeSet::new();
    for g in angles.dihedral_group()? {
        orbit.insert(g.apply_to_sequence(angles, seq)?);
    }
    Ok(orbit)
}

/// Lexicographically smallest member of the orbit.
pub fn orbit_representative(seq: &StackingSequence, angles: &AngleSet) -> Result<StackingSequence> {
    Ok(symmetry_orbit(seq, angles)?
        .into_iter()
        .next()
        .expect("orbit contains seq"))
}

/// Ordered ply labels, each in `1..=d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StackingSequence {
    labels: Vec<usize>,
}

impl StackingSequence {
    pub fn new(labels: Vec<usize>, d: usize) -> Result<Self> {
        if labels.is_empty() {
            return domain("a stacking sequence needs at least one ply");
        }
        if let Some(&bad) = labels.iter().find(|&&s| s == 0 || s > d) {
            return domain(format!("ply label {bad} outside 1..={d}"));
        }
        Ok(Self { labels })
    }

    /// Labels from 0-based indices.
    pub fn from_indices(indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| i + 1).collect(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: usize) -> usize {
        self.labels.iter().filter(|&&s| s == label).count()
    }

    pub fn check_for(&self, d: usize, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return domain(format!(
                "sequence has {} plies, problem expects {n}",
                self.labels.len()
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&s| s == 0 || s > d) {
            return domain(format!("ply label {bad} outside 1..={d}"));
        }
        Ok(())
    }
}

impl fmt::Display for StackingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, s) in self.labels.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}

/// Lamination parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    A,
    B,
    D,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Block::A => "A",
            Block::B => "B",
            Block::D => "D",
        };
        f.write_str(s)
    }
}

/// A single lamination parameter `v_l^X`, `l ∈ 1..=4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Component {
    pub block: Block,
    pub l: usize,
}

impl Component {
    pub fn tag(&self) -> String {
        format!("{}{}", self.block, self.l)
    }
}

/// Lamination parameters; `b` is absent in symmetric mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaminationPoint {
    #[serde(rename = "A")]
    pub a: [f64; 4],
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<[f64; 4]>,
    #[serde(rename = "D")]
    pub d: [f64; 4],
}

impl LaminationPoint {
    pub fn new(a: [f64; 4], b: Option<[f64; 4]>, d: [f64; 4]) -> Result<Self> {
        let p = Self { a, b, d };
        p.validate()?;
        Ok(p)
    }

    pub fn symmetric(a: [f64; 4], d: [f64; 4]) -> Result<Self> {
        Self::new(a, None, d)
    }

    pub fn zeros(symmetric: bool) -> Self {
        Self {
            a: [0.0; 4],
            b: if symmetric { None } else { Some([0.0; 4]) },
            d: [0.0; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (c, v) in self.components() {
            if !v.is_finite() || !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                return domain(format!("lamination parameter {} = {v} outside [-1, 1]", c.tag()));
            }
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.b.is_none()
    }

    pub fn block(&self, block: Block) -> Option<&[f64; 4]> {
        match block {
            Block::A => Some(&self.a),
            Block::B => self.b.as_ref(),
            Block::D => Some(&self.d),
        }
    }

    pub fn get(&self, c: Component) -> Option<f64> {
        if !(1..=4).contains(&c.l) {
            return None;
        }
        self.block(c.block).map(|v| v[c.l - 1])
    }

    pub fn components(&self) -> Vec<(Component, f64)> {
        let mut out = Vec::with_capacity(12);
        for block in [Block::A, Block::B, Block::D] {
            if let Some(v) = self.block(block) {
                for l in 1..=4 {
                    out.push((Component { block, l }, v[l - 1]));
                }
            }
        }
        out
    }

    /// Flat component vector in `A, (B,) D` order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.components().into_iter().map(|(_, v)| v).collect()
    }

    pub fn squared_distance(&self, other: &LaminationPoint) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Per-ply weights `α_n^X` for each lamination block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlyWeights {
    pub a: Vec<f64>,
    pub b: Option<Vec<f64>>,
    pub d: Vec<f64>,
}

impl PlyWeights {
    /// Half-stack weights of a midplane-symmetric laminate: `α^A = 1/N`,
    /// `α^D = (n³ - (n-1)³)/N³`.
    pub fn symmetric(n: usize) -> Self {
        let nf = n as f64;
        let a = vec![1.0 / nf; n];
        let d = (1..=n)
            .map(|i| {
                let i = i as f64;
                (i.powi(3) - (i - 1.0).powi(3)) / nf.powi(3)
            })
            .collect();
        Self { a, b: None, d }
    }

    /// Full-stack weights with ply positions `z_n = -N/2 + n`.
    pub fn general(n: usize) -> Self {
        let nf = n as f64;
        let z = |i: usize| -nf / 2.0 + i as f64;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 1..=n {
            let (hi, lo) = (z(i), z(i - 1));
            a.push((hi - lo) / nf);
            b.push(2.0 / (nf * nf) * (hi * hi - lo * lo));
            d.push(4.0 / (nf * nf * nf) * (hi.powi(3) - lo.powi(3)));
        }
        Self { a, b: Some(b), d }
    }

    /// Arbitrary weights; the A and D blocks need unit absolute sum, B at most one.
    pub fn custom(a: Vec<f64>, b: Option<Vec<f64>>, d: Vec<f64>) -> Result<Self> {
        let w = Self { a, b, d };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        for block in [Block::A, Block::B, Block::D] {
            if let Some(w) = self.block(block) {
                if w.len() != n {
                    return domain(format!("weight block {block} has {} entries, expected {n}", w.len()));
                }
                if w.iter().any(|x| !x.is_finite()) {
                    return domain(format!("weights of block {block} are not finite"));
                }
                let s: f64 = w.iter().map(|x| x.abs()).sum();
                let bad = match block {
                    Block::B => s > 1.0 + 1e-12,
                    _ => (s - 1.0).abs() > 1e-12,
                };
                if bad {
                    return domain(format!("weights of block {block} have absolute sum {s}"));
                }
            }
        }
        Ok(())
    }

    pub fn n_plies(&self) -> usize {
        self.a.len()
    }

    pub fn block(&self, block: Block) -> Option<&[f64]> {
        match block {
            Block::A => Some(&self.a),
            Block::B => self.b.as_deref(),
            Block::D => Some(&self.d),
        }
    }
}

/// Manufacturing constraint together with its penalty magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSpec {
    /// Adjacent plies may differ by at most `max_delta_deg` (circular, mod 180°).
    Disorientation { max_delta_deg: f64, gamma: f64 },
    /// At most `max_same` consecutive identical plies.
    Contiguity { max_same: usize, gamma: f64 },
    /// Labels `s` and `t` must occur equally often.
    Balanced { s: usize, t: usize, gamma: f64 },
    /// Label `t` must occur at least `n_t` times.
    MinCount { t: usize, n_t: usize, gamma: f64 },
}

impl ConstraintSpec {
    pub fn gamma(&self) -> f64 {
        match *self {
            ConstraintSpec::Disorientation { gamma, .. }
            | ConstraintSpec::Contiguity { gamma, .. }
            | ConstraintSpec::Balanced { gamma, .. }
            | ConstraintSpec::MinCount { gamma, .. } => gamma,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ConstraintSpec::Disorientation { .. } => "disorientation",
            ConstraintSpec::Contiguity { .. } => "contiguity",
            ConstraintSpec::Balanced { .. } => "balanced",
            ConstraintSpec::MinCount { .. } => "min_count",
        }
    }

    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        let g = self.gamma();
        if !g.is_finite() || g < 0.0 {
            return domain(format!("penalty magnitude {g} must be finite and nonnegative"));
        }
        let label_ok = |x: usize| (1..=d).contains(&x);
        match *self {
            ConstraintSpec::Disorientation { max_delta_deg, .. } => {
                if !max_delta_deg.is_finite() || max_delta_deg < 0.0 {
                    return domain(format!("invalid disorientation limit {max_delta_deg}"));
                }
            }
            ConstraintSpec::Contiguity { max_same, .. } => {
                if max_same < 1 {
                    return domain("contiguity limit must be at least 1");
                }
            }
            ConstraintSpec::Balanced { s, t, .. } => {
                if !label_ok(s) || !label_ok(t) {
                    return domain(format!("balanced labels ({s}, {t}) outside 1..={d}"));
                }
                if s == t {
                    return domain("balanced constraint needs two distinct labels");
                }
            }
            ConstraintSpec::MinCount { t, n_t, .. } => {
                if !label_ok(t) {
                    return domain(format!("min-count label {t} outside 1..={d}"));
                }
                if n_t < 1 || n_t > n {
                    return domain(format!("min-count {n_t} outside 1..={n}"));
                }
            }
        }
        Ok(())
    }

    /// Ordered label pairs `(t, t')` whose adjacency violates a disorientation limit.
    pub fn violation_pairs(angles: &AngleSet, max_delta_deg: f64) -> Vec<(usize, usize)> {
        let deg = angles.degrees();
        let mut pairs = Vec::new();
        for (i, &a) in deg.iter().enumerate() {
            for (j, &b) in deg.iter().enumerate() {
                if circular_distance_deg(a, b) > max_delta_deg + ANGLE_EPS {
                    pairs.push((i + 1, j + 1));
                }
            }
        }
        pairs
    }

    /// Violation measure without γ: pair count, window count, squared count
    /// difference, or linear shortfall.
    pub fn violations(&self, angles: &AngleSet, seq: &StackingSequence) -> f64 {
        let labels = seq.labels();
        match *self {
            ConstraintSpec::Disorientation { max_delta_deg, .. } => labels
                .windows(2)
                .filter(|w| {
                    let a = angles.degrees()[w[0] - 1];
                    let b = angles.degrees()[w[1] - 1];
                    circular_distance_deg(a, b) > max_delta_deg + ANGLE_EPS
                })
                .count() as f64,
            ConstraintSpec::Contiguity { max_same, .. } => {
                let k = max_same + 1;
                if labels.len() < k {
                    return 0.0;
                }
                labels
                    .windows(k)
                    .filter(|w| w.iter().all(|&s| s == w[0]))
                    .count() as f64
            }
            ConstraintSpec::Balanced { s, t, .. } => {
                let diff = seq.count(s) as f64 - seq.count(t) as f64;
                diff * diff
            }
            ConstraintSpec::MinCount { t, n_t, .. } => n_t.saturating_sub(seq.count(t)) as f64,
        }
    }

    pub fn penalty(&self, angles: &AngleSet, seq: &StackingSequence) -> f64 {
        self.gamma() * self.violations(angles, seq)
    }

    pub fn is_satisfied(&self, angles: &AngleSet, seq: &StackingSequence) -> bool {
        self.violations(angles, seq) == 0.0
    }
}

/// A complete stacking sequence retrieval instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SsrProblem {
    angle_set: AngleSet,
    n_plies: usize,
    symmetric: bool,
    weights: PlyWeights,
    target: LaminationPoint,
    constraints: Vec<ConstraintSpec>,
}

impl SsrProblem {
    pub fn new(
        angle_set: AngleSet,
        n_plies: usize,
        symmetric: bool,
        target: LaminationPoint,
        constraints: Vec<ConstraintSpec>,
    ) -> Result<Self> {
        if n_plies == 0 {
            return domain("a laminate needs at least one ply");
        }
        let weights = if symmetric {
            PlyWeights::symmetric(n_plies)
        } else {
            PlyWeights::general(n_plies)
        };
        Self::with_weights(angle_set, symmetric, weights, target, constraints)
    }

    pub fn with_weights(
        angle_set: AngleSet,
        symmetric: bool,
        weights: PlyWeights,
        target: LaminationPoint,
        constraints: Vec<ConstraintSpec>,
    ) -> Result<Self> {
        weights.validate()?;
        let n_plies = weights.n_plies();
        if n_plies == 0 {
            return domain("a laminate needs at least one ply");
        }
        if symmetric != weights.b.is_none() {
            return domain("weights do not match the symmetric flag");
        }
        if symmetric != target.is_symmetric() {
            return domain("target blocks do not match the symmetric flag");
        }
        target.validate()?;
        for c in &constraints {
            c.validate(angle_set.len(), n_plies)?;
        }
        Ok(Self {
            angle_set,
            n_plies,
            symmetric,
            weights,
            target,
            constraints,
        })
    }

    /// Same problem with a different target; the target is not range-checked
    /// so that rotated points can be used directly.
    pub fn with_target(&self, target: LaminationPoint) -> Result<Self> {
        if target.is_symmetric() != self.symmetric {
            return domain("target blocks do not match the symmetric flag");
        }
        Ok(Self {
            target,
            ..self.clone()
        })
    }

    pub fn with_constraints(&self, constraints: Vec<ConstraintSpec>) -> Result<Self> {
        for c in &constraints {
            c.validate(self.d(), self.n_plies)?;
        }
        Ok(Self {
            constraints,
            ..self.clone()
        })
    }

    pub fn angle_set(&self) -> &AngleSet {
        &self.angle_set
    }

    pub fn d(&self) -> usize {
        self.angle_set.len()
    }

    pub fn n_plies(&self) -> usize {
        self.n_plies
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn weights(&self) -> &PlyWeights {
        &self.weights
    }

    pub fn target(&self) -> &LaminationPoint {
        &self.target
    }

    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }

    /// The lamination parameters used by this problem: 8 symmetric, 12 general.
    pub fn components(&self) -> Vec<Component> {
        let blocks: &[Block] = if self.symmetric {
            &[Block::A, Block::D]
        } else {
            &[Block::A, Block::B, Block::D]
        };
        blocks
            .iter()
            .flat_map(|&block| (1..=4).map(move |l| Component { block, l }))
            .collect()
    }

    pub fn n_components(&self) -> usize {
        if self.symmetric {
            8
        } else {
            12
        }
    }

    pub fn lamination_parameters(&self, seq: &StackingSequence) -> Result<LaminationPoint> {
        seq.check_for(self.d(), self.n_plies)?;
        let f = self.angle_set.ply_function_table();
        let block_sum = |w: &[f64]| -> [f64; 4] {
            let mut v = [0.0; 4];
            for (alpha, &s) in w.iter().zip(seq.labels()) {
                for l in 0..4 {
                    v[l] += alpha * f[s - 1][l];
                }
            }
            v
        };
        Ok(LaminationPoint {
            a: block_sum(&self.weights.a),
            b: self.weights.b.as_deref().map(block_sum),
            d: block_sum(&self.weights.d),
        })
    }

    /// Squared-error loss to the target, without penalties.
    pub fn loss(&self, seq: &StackingSequence) -> Result<f64> {
        Ok(self.lamination_parameters(seq)?.squared_distance(&self.target))
    }

    /// `sqrt(loss / K)` with `K` the number of lamination components.
    pub fn rmse(&self, seq: &StackingSequence) -> Result<f64> {
        Ok(rmse_from_loss(self.loss(seq)?, self.n_components()))
    }

    /// `sqrt(loss)`: Euclidean distance to the target in lamination space.
    pub fn euclidean_distance(&self, seq: &StackingSequence) -> Result<f64> {
        Ok(self.loss(seq)?.sqrt())
    }

    pub fn penalty(&self, seq: &StackingSequence) -> Result<f64> {
        seq.check_for(self.d(), self.n_plies)?;
        Ok(self
            .constraints
            .iter()
            .map(|c| c.penalty(&self.angle_set, seq))
            .sum())
    }

    /// Loss plus all constraint penalties.
    pub fn objective(&self, seq: &StackingSequence) -> Result<f64> {
        Ok(self.loss(seq)? + self.penalty(seq)?)
    }

    pub fn is_feasible(&self, seq: &StackingSequence) -> bool {
        self.constraints
            .iter()
            .all(|c| c.is_satisfied(&self.angle_set, seq))
    }
}

pub fn rmse_from_loss(loss: f64, n_components: usize) -> f64 {
    (loss.max(0.0) / n_components as f64).sqrt()
}

/// Standalone ply-function evaluation.
pub fn ply_functions(angles: &AngleSet, label: usize) -> Result<[f64; 4]> {
    angles.ply_functions(label)
}

/// Standalone penalty evaluation.
pub fn penalty_value(spec: &ConstraintSpec, angles: &AngleSet, seq: &StackingSequence) -> f64 {
    spec.penalty(angles, seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seq(labels: &[usize]) -> StackingSequence {
        StackingSequence::new(labels.to_vec(), 4).unwrap()
    }

    fn sym_problem(n: usize, target: LaminationPoint) -> SsrProblem {
        SsrProblem::new(AngleSet::quad(), n, true, target, vec![]).unwrap()
    }

    #[test]
    fn ply_functions_of_quad_angles() {
        let a = AngleSet::quad();
        let close = |x: [f64; 4], y: [f64; 4]| {
            for i in 0..4 {
                assert_abs_diff_eq!(x[i], y[i], epsilon = 1e-15);
            }
        };
        close(a.ply_functions(1).unwrap(), [1.0, 0.0, 1.0, 0.0]);
        close(a.ply_functions(2).unwrap(), [0.0, 1.0, -1.0, 0.0]);
        close(a.ply_functions(4).unwrap(), [0.0, -1.0, -1.0, 0.0]);
        assert!(a.ply_functions(0).is_err());
        assert!(a.ply_functions(5).is_err());
    }

    #[test]
    fn angle_set_validation() {
        assert!(AngleSet::new(vec![0.0]).is_err());
        assert!(AngleSet::new(vec![0.0, 0.0]).is_err());
        assert!(AngleSet::new(vec![-90.0, 0.0]).is_err());
        assert!(AngleSet::new(vec![90.0, 0.0]).is_ok());
        assert!(AngleSet::quad().is_evenly_spaced());
        assert!(!AngleSet::new(vec![0.0, 30.0, 45.0, 90.0]).unwrap().is_evenly_spaced());
        assert!(AngleSet::new(vec![10.0, 55.0, -80.0, -35.0]).unwrap().is_evenly_spaced());
    }

    #[test]
    fn lamination_parameters_worked_examples() {
        let p = sym_problem(6, LaminationPoint::zeros(true));
        let v = p.lamination_parameters(&seq(&[1; 6])).unwrap();
        for (x, y) in v.a.iter().zip([1.0, 0.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-14);
        }
        for (x, y) in v.d.iter().zip([1.0, 0.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-14);
        }

        // α^D = (1, 7, 19, 37)/64 applied to f over labels (1,2,3,4)
        let p = sym_problem(4, LaminationPoint::zeros(true));
        let v = p.lamination_parameters(&seq(&[1, 2, 3, 4])).unwrap();
        for x in v.a {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-15);
        }
        let expected_d = [-0.28125, -0.46875, -0.375, 0.0];
        for (x, y) in v.d.iter().zip(expected_d) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-14);
        }

        let p = sym_problem(2, LaminationPoint::zeros(true));
        let v = p.lamination_parameters(&seq(&[3, 3])).unwrap();
        for (x, y) in v.a.iter().zip([-1.0, 0.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-14);
        }

        assert!(p.lamination_parameters(&seq(&[1, 2, 3])).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for n in 1..40 {
            for w in [PlyWeights::symmetric(n), PlyWeights::general(n)] {
                w.validate().unwrap();
            }
        }
        let w = PlyWeights::symmetric(4);
        assert_eq!(w.d.iter().map(|x| x * 64.0).collect::<Vec<_>>(), vec![1.0, 7.0, 19.0, 37.0]);
        assert!(PlyWeights::custom(vec![0.5, 0.4], None, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn loss_and_rmse() {
        let p = sym_problem(6, LaminationPoint::zeros(true));
        let s = seq(&[1; 6]);
        assert_abs_diff_eq!(p.loss(&s).unwrap(), 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(p.rmse(&s).unwrap(), 0.5f64.sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(p.euclidean_distance(&s).unwrap(), 2.0, epsilon = 1e-13);

        let exact = p.lamination_parameters(&seq(&[2, 1, 4, 4, 3, 2])).unwrap();
        let p = p.with_target(exact).unwrap();
        assert_abs_diff_eq!(p.loss(&seq(&[2, 1, 4, 4, 3, 2])).unwrap(), 0.0, epsilon = 1e-28);
        assert_eq!(p.rmse(&seq(&[2, 1, 4, 4, 3, 2])).unwrap(), 0.0);
    }

    #[test]
    fn general_mode_has_twelve_components() {
        let p = SsrProblem::new(AngleSet::quad(), 5, false, LaminationPoint::zeros(false), vec![]).unwrap();
        assert_eq!(p.components().len(), 12);
        let v = p.lamination_parameters(&seq(&[1, 1, 1, 1, 1])).unwrap();
        // B weights are antisymmetric about the midplane
        for x in v.b.unwrap() {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-14);
        }
        assert!(SsrProblem::new(AngleSet::quad(), 5, false, LaminationPoint::zeros(true), vec![]).is_err());
    }

    #[test]
    fn penalty_worked_examples() {
        let a = AngleSet::quad();
        let dis = ConstraintSpec::Disorientation {
            max_delta_deg: 45.0,
            gamma: 0.25,
        };
        assert_abs_diff_eq!(dis.penalty(&a, &seq(&[1, 3, 2, 4, 1])), 0.5);
        // -45° and +45° are 90° apart; -45° and 0° are adjacent
        assert_eq!(dis.violations(&a, &seq(&[4, 1, 2])), 0.0);

        let con = ConstraintSpec::Contiguity { max_same: 2, gamma: 1.0 };
        assert_eq!(con.penalty(&a, &seq(&[1, 1, 1, 1])), 2.0);
        assert_eq!(con.penalty(&a, &seq(&[1, 1])), 0.0);

        let bal = ConstraintSpec::Balanced { s: 2, t: 4, gamma: 1.0 };
        assert_eq!(bal.penalty(&a, &seq(&[2, 2, 2, 4, 1])), 4.0);

        let min = ConstraintSpec::MinCount { t: 1, n_t: 1, gamma: 1.0 };
        assert_eq!(min.penalty(&a, &seq(&[2; 10])), 1.0);
        assert_eq!(min.penalty(&a, &seq(&[1, 2, 2])), 0.0);
    }

    #[test]
    fn violation_pairs_for_45_degrees() {
        let pairs = ConstraintSpec::violation_pairs(&AngleSet::quad(), 45.0);
        assert_eq!(pairs, vec![(1, 3), (2, 4), (3, 1), (4, 2)]);
    }

    #[test]
    fn constraint_validation() {
        assert!(ConstraintSpec::Balanced { s: 2, t: 2, gamma: 1.0 }.validate(4, 5).is_err());
        assert!(ConstraintSpec::MinCount { t: 1, n_t: 6, gamma: 1.0 }.validate(4, 5).is_err());
        assert!(ConstraintSpec::Contiguity { max_same: 0, gamma: 1.0 }.validate(4, 5).is_err());
        assert!(ConstraintSpec::Disorientation { max_delta_deg: 45.0, gamma: -1.0 }.validate(4, 5).is_err());
    }

    #[test]
    fn orbit_of_constant_sequence() {
        let a = AngleSet::quad();
        let orbit = symmetry_orbit(&seq(&[1, 1]), &a).unwrap();
        let expected: BTreeSet<_> = (1..=4).map(|s| seq(&[s, s])).collect();
        assert_eq!(orbit, expected);
        let irregular = AngleSet::new(vec![0.0, 30.0, 45.0, 90.0]).unwrap();
        assert!(matches!(
            symmetry_orbit(&StackingSequence::new(vec![1], 4).unwrap(), &irregular),
            Err(SsrError::Unsupported(_))
        ));
    }

    #[test]
    fn reflection_swaps_plus_and_minus_45() {
        let a = AngleSet::quad();
        let g = DihedralElement { shift: 0, reflect: true };
        assert_eq!(g.apply_to_sequence(&a, &seq(&[1, 2, 3, 4])).unwrap(), seq(&[1, 4, 3, 2]));
        let r = DihedralElement { shift: 1, reflect: false };
        assert_eq!(r.apply_to_sequence(&a, &seq(&[1, 2, 3, 4])).unwrap(), seq(&[2, 3, 4, 1]));
    }

    #[test]
    fn display_sequence() {
        assert_eq!(seq(&[1, 3, 2]).to_string(), "(1,3,2)");
    }
}
