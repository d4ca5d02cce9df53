//! Diagonal matrix product operators for the loss and the constraint penalties.
//!
//! Every operator here is diagonal in the label basis, so a site tensor is a
//! stack of `d` bond matrices `W[n]_s` and the operator value on a sequence is
//! the scalar matrix chain `W[1]_{s_1} ⋯ W[N]_{s_N}`.

use crate::error::{domain, Result, SsrError};
use crate::laminate::{AngleSet, Component, ConstraintSpec, SsrProblem, StackingSequence};
use crate::tensor::DenseTensor;

/// One MPO term. Site `n` holds a `(b_left, b_right, d)` array laid out as
/// `(i * b_right + j) * d + s`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMpo {
    tag: String,
    d: usize,
    bonds: Vec<usize>,
    sites: Vec<Vec<f64>>,
}

impl DiagonalMpo {
    pub fn new(tag: impl Into<String>, d: usize, bonds: Vec<usize>, sites: Vec<Vec<f64>>) -> Result<Self> {
        if d == 0 {
            return domain("physical dimension must be positive");
        }
        if sites.is_empty() || bonds.len() != sites.len() + 1 {
            return Err(SsrError::Shape(format!(
                "{} bonds for {} sites",
                bonds.len(),
                sites.len()
            )));
        }
        if bonds[0] != 1 || bonds[sites.len()] != 1 {
            return Err(SsrError::Shape("boundary bonds must have extent 1".into()));
        }
        for (n, w) in sites.iter().enumerate() {
            let expect = bonds[n] * bonds[n + 1] * d;
            if w.len() != expect {
                return Err(SsrError::Shape(format!(
                    "site {n} has {} entries, expected {expect}",
                    w.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(SsrError::Numeric(format!("site {n} has non-finite entries")));
            }
        }
        Ok(Self {
            tag: tag.into(),
            d,
            bonds,
            sites,
        })
    }

    /// Build from per-site square bond matrices of extent `b` with boundary
    /// vectors folded into the first and last site.
    ///
    /// `site_matrix(n, s)` returns the row-major `b × b` matrix at site `n`.
    pub fn from_bulk(
        tag: impl Into<String>,
        n_sites: usize,
        d: usize,
        b: usize,
        left: &[f64],
        right: &[f64],
        mut site_matrix: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        if n_sites == 0 {
            return domain("an MPO needs at least one site");
        }
        if left.len() != b || right.len() != b {
            return Err(SsrError::Shape("boundary vectors must match the bond extent".into()));
        }
        let mut bonds = vec![b; n_sites + 1];
        bonds[0] = 1;
        bonds[n_sites] = 1;
        let mut sites = Vec::with_capacity(n_sites);
        for n in 0..n_sites {
            let (bl, br) = (bonds[n], bonds[n + 1]);
            let mut w = vec![0.0; bl * br * d];
            for s in 0..d {
                let m = site_matrix(n, s);
                debug_assert_eq!(m.len(), b * b);
                // fold boundary vectors: rows contracted with `left` at the
                // first site, columns with `right` at the last
                for i in 0..bl {
                    for j in 0..br {
                        let mut acc = 0.0;
                        for p in 0..b {
                            let lp = if n == 0 { left[p] } else if p == i { 1.0 } else { 0.0 };
                            if lp == 0.0 {
                                continue;
                            }
                            for q in 0..b {
                                let rq = if n + 1 == n_sites {
                                    right[q]
                                } else if q == j {
                                    1.0
                                } else {
                                    0.0
                                };
                                if rq != 0.0 {
                                    acc += lp * m[p * b + q] * rq;
                                }
                            }
                        }
                        w[(i * br + j) * d + s] = acc;
                    }
                }
            }
            sites.push(w);
        }
        Self::new(tag, d, bonds, sites)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    /// Bond extents `b_0 … b_N`.
    pub fn bonds(&self) -> &[usize] {
        &self.bonds
    }

    pub fn max_bond(&self) -> usize {
        self.bonds.iter().copied().max().unwrap_or(1)
    }

    pub fn site(&self, n: usize) -> &[f64] {
        &self.sites[n]
    }

    pub fn site_tensor(&self, n: usize) -> DenseTensor {
        DenseTensor::with_labels(
            vec![self.bonds[n], self.bonds[n + 1], self.d],
            self.sites[n].clone(),
            vec!["left".into(), "right".into(), "phys".into()],
        )
        .expect("validated site")
    }

    pub fn entry(&self, n: usize, i: usize, j: usize, s: usize) -> f64 {
        self.sites[n][(i * self.bonds[n + 1] + j) * self.d + s]
    }

    /// Operator value on 0-based label indices.
    pub fn chain_value_indices(&self, indices: &[usize]) -> Result<f64> {
        if indices.len() != self.n_sites() {
            return Err(SsrError::Shape(format!(
                "sequence of length {} for an MPO on {} sites",
                indices.len(),
                self.n_sites()
            )));
        }
        let mut v = vec![1.0];
        for (n, &s) in indices.iter().enumerate() {
            if s >= self.d {
                return domain(format!("label index {s} outside 0..{}", self.d));
            }
            let br = self.bonds[n + 1];
            let mut next = vec![0.0; br];
            for (i, &vi) in v.iter().enumerate() {
                if vi == 0.0 {
                    continue;
                }
                for (j, nj) in next.iter_mut().enumerate() {
                    *nj += vi * self.sites[n][(i * br + j) * self.d + s];
                }
            }
            v = next;
        }
        Ok(v[0])
    }

    pub fn chain_value(&self, seq: &StackingSequence) -> Result<f64> {
        let idx: Vec<usize> = seq.labels().iter().map(|&l| l.wrapping_sub(1)).collect();
        self.chain_value_indices(&idx)
    }
}

/// Upper-triangular `M(x)` with `M(x) M(y) = M(x + y)` and top-right entry `x²`.
pub fn m_matrix(x: f64) -> [[f64; 3]; 3] {
    let r = std::f64::consts::SQRT_2 * x;
    [[1.0, r, x * x], [0.0, 1.0, r], [0.0, 0.0, 1.0]]
}

fn square_chain(
    tag: impl Into<String>,
    n_sites: usize,
    d: usize,
    right_scale: f64,
    h: impl Fn(usize, usize) -> f64,
) -> Result<DiagonalMpo> {
    DiagonalMpo::from_bulk(tag, n_sites, d, 3, &[1.0, 0.0, 0.0], &[0.0, 0.0, right_scale], |n, s| {
        m_matrix(h(n, s)).iter().flatten().copied().collect()
    })
}

/// `(v_l^X − ξ_l^X)²` as a bond-3 MPO.
pub fn loss_term_mpo(problem: &SsrProblem, component: Component) -> Result<DiagonalMpo> {
    if !(1..=4).contains(&component.l) {
        return domain(format!("component index {} outside 1..=4", component.l));
    }
    let weights = problem
        .weights()
        .block(component.block)
        .ok_or_else(|| SsrError::Domain(format!("block {} unused by this problem", component.block)))?;
    let xi = problem
        .target()
        .get(component)
        .ok_or_else(|| SsrError::Domain(format!("target has no {} component", component.tag())))?;
    let f = problem.angle_set().ply_function_table();
    let l = component.l - 1;
    // the target is split over sites in proportion to |α|, evenly if all vanish
    let abs_sum: f64 = weights.iter().map(|a| a.abs()).sum();
    let n_plies = problem.n_plies();
    let share = |a: f64| {
        if abs_sum > 0.0 {
            a.abs() / abs_sum
        } else {
            1.0 / n_plies as f64
        }
    };
    square_chain(component.tag(), n_plies, problem.d(), 1.0, |n, s| {
        let a = weights[n];
        a * f[s][l] - share(a) * xi
    })
}

/// `γ ·` number of adjacent ordered label pairs listed in `violation_pairs` (1-based).
pub fn disorientation_mpo(
    n_sites: usize,
    d: usize,
    gamma: f64,
    violation_pairs: &[(usize, usize)],
) -> Result<DiagonalMpo> {
    for &(a, b) in violation_pairs {
        if !(1..=d).contains(&a) || !(1..=d).contains(&b) {
            return domain(format!("violation pair ({a}, {b}) outside 1..={d}"));
        }
    }
    let b = d + 2;
    let last = d + 1;
    let mut left = vec![0.0; b];
    left[0] = 1.0;
    let mut right = vec![0.0; b];
    right[last] = 1.0;
    DiagonalMpo::from_bulk("disorientation", n_sites, d, b, &left, &right, |_, s| {
        let mut m = vec![0.0; b * b];
        m[0] = 1.0;
        m[s + 1] = 1.0;
        for &(k, t) in violation_pairs {
            if t == s + 1 {
                m[k * b + last] = gamma;
            }
        }
        m[last * b + last] = 1.0;
        m
    })
}

/// `γ ·` number of length-`k` windows of identical labels.
pub fn contiguity_mpo(n_sites: usize, d: usize, k: usize, gamma: f64) -> Result<DiagonalMpo> {
    if k < 2 {
        return domain(format!("window length {k} must be at least 2"));
    }
    let b = d * (k - 1) + 2;
    let last = b - 1;
    let slot = |block: usize, s: usize| 1 + (block - 1) * d + s;
    let mut left = vec![0.0; b];
    left[0] = 1.0;
    let mut right = vec![0.0; b];
    right[last] = 1.0;
    DiagonalMpo::from_bulk("contiguity", n_sites, d, b, &left, &right, |_, s| {
        let mut m = vec![0.0; b * b];
        m[0] = 1.0;
        m[slot(1, s)] = 1.0;
        for block in 1..k - 1 {
            m[slot(block, s) * b + slot(block + 1, s)] = 1.0;
        }
        m[slot(k - 1, s) * b + last] = gamma;
        m[last * b + last] = 1.0;
        m
    })
}

/// `γ (count(s) − count(t))²`, labels 1-based.
pub fn balanced_mpo(n_sites: usize, d: usize, s: usize, t: usize, gamma: f64) -> Result<DiagonalMpo> {
    if s == t || !(1..=d).contains(&s) || !(1..=d).contains(&t) {
        return domain(format!("balanced labels ({s}, {t}) must be distinct and in 1..={d}"));
    }
    square_chain("balanced", n_sites, d, gamma, |_, x| {
        let x = x + 1;
        (x == s) as u8 as f64 - (x == t) as u8 as f64
    })
}

/// `γ · max(0, n_t − count(t))`, label 1-based.
pub fn min_count_mpo(n_sites: usize, d: usize, t: usize, n_t: usize, gamma: f64) -> Result<DiagonalMpo> {
    if !(1..=d).contains(&t) {
        return domain(format!("label {t} outside 1..={d}"));
    }
    if n_t < 1 || n_t > n_sites {
        return domain(format!("required count {n_t} outside 1..={n_sites}"));
    }
    let b = n_t + 1;
    let mut left = vec![0.0; b];
    left[0] = 1.0;
    let mut right = vec![-gamma; b];
    right[0] = gamma * n_t as f64;
    DiagonalMpo::from_bulk("min_count", n_sites, d, b, &left, &right, |_, s| {
        let mut m = vec![0.0; b * b];
        if s + 1 == t {
            m[0] = 1.0;
            for i in 0..n_t {
                m[i * b + i + 1] = 1.0;
            }
        } else {
            for i in 0..b {
                m[i * b + i] = 1.0;
            }
        }
        m
    })
}

pub fn constraint_mpo(angles: &AngleSet, n_sites: usize, spec: &ConstraintSpec) -> Result<DiagonalMpo> {
    spec.validate(angles.len(), n_sites)?;
    let d = angles.len();
    match *spec {
        ConstraintSpec::Disorientation { max_delta_deg, gamma } => disorientation_mpo(
            n_sites,
            d,
            gamma,
            &ConstraintSpec::violation_pairs(angles, max_delta_deg),
        ),
        ConstraintSpec::Contiguity { max_same, gamma } => contiguity_mpo(n_sites, d, max_same + 1, gamma),
        ConstraintSpec::Balanced { s, t, gamma } => balanced_mpo(n_sites, d, s, t, gamma),
        ConstraintSpec::MinCount { t, n_t, gamma } => min_count_mpo(n_sites, d, t, n_t, gamma),
    }
}

/// A sum of MPO terms on a common chain.
#[derive(Clone, Debug, PartialEq)]
pub struct MpoSum {
    terms: Vec<DiagonalMpo>,
}

impl MpoSum {
    pub fn new(terms: Vec<DiagonalMpo>) -> Result<Self> {
        if let Some(first) = terms.first() {
            for t in &terms[1..] {
                if t.n_sites() != first.n_sites() || t.d() != first.d() {
                    return Err(SsrError::Shape(format!(
                        "term {} does not match the chain of {}",
                        t.tag(),
                        first.tag()
                    )));
                }
            }
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[DiagonalMpo] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_sites(&self) -> Option<usize> {
        self.terms.first().map(DiagonalMpo::n_sites)
    }

    pub fn d(&self) -> Option<usize> {
        self.terms.first().map(DiagonalMpo::d)
    }

    pub fn tags(&self) -> Vec<&str> {
        self.terms.iter().map(DiagonalMpo::tag).collect()
    }

    pub fn chain_value_indices(&self, indices: &[usize]) -> Result<f64> {
        self.terms.iter().map(|t| t.chain_value_indices(indices)).sum()
    }

    pub fn chain_value(&self, seq: &StackingSequence) -> Result<f64> {
        self.terms.iter().map(|t| t.chain_value(seq)).sum()
    }

    /// Single block-diagonal MPO equal to the sum of all terms.
    pub fn stacked(&self) -> Result<DiagonalMpo> {
        let first = self
            .terms
            .first()
            .ok_or_else(|| SsrError::Shape("cannot stack an empty sum".into()))?;
        let (n_sites, d) = (first.n_sites(), first.d());
        let mut bonds = vec![0usize; n_sites + 1];
        bonds[0] = 1;
        bonds[n_sites] = 1;
        for b in bonds.iter_mut().take(n_sites).skip(1) {
            *b = 0;
        }
        for t in &self.terms {
            for (n, b) in bonds.iter_mut().enumerate().take(n_sites).skip(1) {
                *b += t.bonds()[n];
            }
        }
        let mut sites = Vec::with_capacity(n_sites);
        for n in 0..n_sites {
            let (bl, br) = (bonds[n], bonds[n + 1]);
            let mut w = vec![0.0; bl * br * d];
            let (mut oi, mut oj) = (0, 0);
            for t in &self.terms {
                let (tl, tr) = (t.bonds()[n], t.bonds()[n + 1]);
                for i in 0..tl {
                    for j in 0..tr {
                        for s in 0..d {
                            let (ii, jj) = (if n == 0 { 0 } else { oi + i }, if n + 1 == n_sites { 0 } else { oj + j });
                            w[(ii * br + jj) * d + s] += t.entry(n, i, j, s);
                        }
                    }
                }
                if n > 0 {
                    oi += tl;
                }
                if n + 1 < n_sites {
                    oj += tr;
                }
            }
            sites.push(w);
        }
        DiagonalMpo::new("stacked", d, bonds, sites)
    }
}

/// One loss term per lamination component (8 or 12).
pub fn loss_terms(problem: &SsrProblem) -> Result<MpoSum> {
    let terms = problem
        .components()
        .into_iter()
        .map(|c| loss_term_mpo(problem, c))
        .collect::<Result<Vec<_>>>()?;
    MpoSum::new(terms)
}

/// Loss terms followed by one term per constraint.
pub fn loss_mpo_sum(problem: &SsrProblem) -> Result<MpoSum> {
    let mut terms = loss_terms(problem)?.terms;
    for spec in problem.constraints() {
        terms.push(constraint_mpo(problem.angle_set(), problem.n_plies(), spec)?);
    }
    MpoSum::new(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laminate::{Block, LaminationPoint};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(labels: &[usize]) -> StackingSequence {
        StackingSequence::from_indices(&labels.iter().map(|l| l - 1).collect::<Vec<_>>())
    }

    fn random_seq(n: usize, d: usize, rng: &mut ChaCha8Rng) -> StackingSequence {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..d)).collect();
        StackingSequence::from_indices(&idx)
    }

    fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    #[test]
    fn m_matrix_composition() {
        assert_abs_diff_eq!(mat_mul(&m_matrix(2.0), &m_matrix(3.0))[0][2], 25.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let p = mat_mul(&m_matrix(x), &m_matrix(y));
            let q = m_matrix(x + y);
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(p[i][j], q[i][j], epsilon = 1e-12);
                }
            }
        }
    }

    fn sym_problem(n: usize, target: LaminationPoint, constraints: Vec<ConstraintSpec>) -> SsrProblem {
        SsrProblem::new(AngleSet::quad(), n, true, target, constraints).unwrap()
    }

    #[test]
    fn loss_term_vanishes_at_exact_target() {
        let s = seq(&[1, 2, 4, 3, 3, 1]);
        let base = sym_problem(6, LaminationPoint::zeros(true), vec![]);
        let p = base.with_target(base.lamination_parameters(&s).unwrap()).unwrap();
        for c in p.components() {
            let w = loss_term_mpo(&p, c).unwrap();
            assert_abs_diff_eq!(w.chain_value(&s).unwrap(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn loss_terms_match_direct_evaluation_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = LaminationPoint::new(
            std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            Some(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
            std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        for symmetric in [true, false] {
            let t = if symmetric {
                LaminationPoint::symmetric(target.a, target.d).unwrap()
            } else {
                target.clone()
            };
            let p = SsrProblem::new(AngleSet::quad(), 6, symmetric, t, vec![]).unwrap();
            let terms: Vec<_> = p.components().into_iter().map(|c| (c, loss_term_mpo(&p, c).unwrap())).collect();
            for code in 0..4096usize {
                let idx: Vec<usize> = (0..6).rev().map(|k| (code >> (2 * k)) & 3).collect();
                let s = StackingSequence::from_indices(&idx);
                let v = p.lamination_parameters(&s).unwrap();
                for (c, w) in &terms {
                    let expect = (v.get(*c).unwrap() - p.target().get(*c).unwrap()).powi(2);
                    assert_abs_diff_eq!(w.chain_value(&s).unwrap(), expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_site_loss_term() {
        let p = SsrProblem::new(AngleSet::quad(), 1, true, LaminationPoint::zeros(true), vec![]).unwrap();
        let w = loss_term_mpo(&p, Component { block: Block::A, l: 1 }).unwrap();
        assert_eq!(w.bonds(), &[1, 1]);
        assert_abs_diff_eq!(w.chain_value(&seq(&[1])).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn invalid_component_rejected() {
        let p = sym_problem(4, LaminationPoint::zeros(true), vec![]);
        assert!(loss_term_mpo(&p, Component { block: Block::B, l: 1 }).is_err());
        assert!(loss_term_mpo(&p, Component { block: Block::A, l: 5 }).is_err());
    }

    #[test]
    fn term_counts() {
        let p = sym_problem(6, LaminationPoint::zeros(true), vec![]);
        assert_eq!(loss_mpo_sum(&p).unwrap().len(), 8);
        let p = p
            .with_constraints(vec![ConstraintSpec::Disorientation {
                max_delta_deg: 45.0,
                gamma: 0.25,
            }])
            .unwrap();
        assert_eq!(loss_mpo_sum(&p).unwrap().len(), 9);
        let g = SsrProblem::new(AngleSet::quad(), 6, false, LaminationPoint::zeros(false), vec![]).unwrap();
        assert_eq!(loss_mpo_sum(&g).unwrap().len(), 12);
    }

    fn quad_disorientation(n: usize, gamma: f64) -> DiagonalMpo {
        let pairs = ConstraintSpec::violation_pairs(&AngleSet::quad(), 45.0);
        disorientation_mpo(n, 4, gamma, &pairs).unwrap()
    }

    #[test]
    fn disorientation_examples() {
        let w = quad_disorientation(5, 0.25);
        assert_abs_diff_eq!(w.chain_value(&seq(&[1, 3, 2, 4, 1])).unwrap(), 0.5, epsilon = 1e-14);
        assert_eq!(w.chain_value(&seq(&[2; 5])).unwrap(), 0.0);
        assert_eq!(w.max_bond(), 6);
    }

    #[test]
    fn disorientation_matches_counter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConstraintSpec::Disorientation {
            max_delta_deg: 45.0,
            gamma: 0.25,
        };
        let w = quad_disorientation(50, 0.25);
        for _ in 0..200 {
            let s = random_seq(50, 4, &mut rng);
            assert_eq!(w.chain_value(&s).unwrap(), spec.penalty(&AngleSet::quad(), &s));
        }
    }

    #[test]
    fn contiguity_examples() {
        let w = contiguity_mpo(4, 4, 3, 1.5).unwrap();
        assert_abs_diff_eq!(w.chain_value(&seq(&[1, 1, 1, 1])).unwrap(), 3.0, epsilon = 1e-14);
        assert_eq!(w.chain_value(&seq(&[1, 1, 2, 2])).unwrap(), 0.0);
        assert_eq!(w.max_bond(), 4 * 2 + 2);
        let short = contiguity_mpo(3, 4, 5, 1.0).unwrap();
        assert_eq!(short.chain_value(&seq(&[2, 2, 2])).unwrap(), 0.0);
        assert!(contiguity_mpo(3, 4, 1, 1.0).is_err());
    }

    #[test]
    fn contiguity_matches_window_counter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [2, 3, 6] {
            let spec = ConstraintSpec::Contiguity {
                max_same: k - 1,
                gamma: 0.7,
            };
            let w = contiguity_mpo(50, 4, k, 0.7).unwrap();
            for _ in 0..100 {
                // low-entropy sequences so long runs actually occur
                let idx: Vec<usize> = (0..50).map(|_| rng.random_range(0..2)).collect();
                let s = StackingSequence::from_indices(&idx);
                assert_abs_diff_eq!(
                    w.chain_value(&s).unwrap(),
                    spec.penalty(&AngleSet::quad(), &s),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn balanced_examples() {
        let w = balanced_mpo(5, 4, 2, 4, 1.0).unwrap();
        assert_abs_diff_eq!(w.chain_value(&seq(&[2, 2, 2, 4, 1])).unwrap(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.chain_value(&seq(&[2, 4, 1, 3, 3])).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(w.max_bond(), 3);
        assert!(balanced_mpo(5, 4, 2, 2, 1.0).is_err());
    }

    #[test]
    fn balanced_matches_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConstraintSpec::Balanced { s: 2, t: 4, gamma: 0.3 };
        let w = balanced_mpo(50, 4, 2, 4, 0.3).unwrap();
        for _ in 0..100 {
            let s = random_seq(50, 4, &mut rng);
            assert_abs_diff_eq!(
                w.chain_value(&s).unwrap(),
                spec.penalty(&AngleSet::quad(), &s),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn min_count_examples() {
        let w = min_count_mpo(10, 4, 3, 1, 1.0).unwrap();
        assert_eq!(w.chain_value(&seq(&[1; 10])).unwrap(), 1.0);
        assert_eq!(w.chain_value(&seq(&[1, 1, 3, 1, 1, 1, 3, 1, 1, 1])).unwrap(), 0.0);
        assert_eq!(w.max_bond(), 2);
    }

    #[test]
    fn min_count_matches_shortfall() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = ConstraintSpec::MinCount { t: 2, n_t: 2, gamma: 0.5 };
        let w = min_count_mpo(20, 4, 2, 2, 0.5).unwrap();
        for _ in 0..300 {
            // bias away from label 2 to hit every shortfall value
            let idx: Vec<usize> = (0..20)
                .map(|_| if rng.random_bool(0.06) { 1 } else { [0, 2, 3][rng.random_range(0..3)] })
                .collect();
            let s = StackingSequence::from_indices(&idx);
            assert_abs_diff_eq!(
                w.chain_value(&s).unwrap(),
                spec.penalty(&AngleSet::quad(), &s),
                epsilon = 1e-12
            );
        }
    }

    fn all_constraints() -> Vec<ConstraintSpec> {
        vec![
            ConstraintSpec::Disorientation {
                max_delta_deg: 45.0,
                gamma: 0.25,
            },
            ConstraintSpec::Contiguity { max_same: 2, gamma: 0.5 },
            ConstraintSpec::Balanced { s: 2, t: 4, gamma: 0.1 },
            ConstraintSpec::MinCount { t: 3, n_t: 2, gamma: 0.3 },
        ]
    }

    #[test]
    fn sum_matches_objective_exhaustively() {
        let target = LaminationPoint::symmetric([0.2, -0.1, 0.3, 0.0], [-0.4, 0.1, 0.05, 0.2]).unwrap();
        let p = sym_problem(6, target, all_constraints());
        let sum = loss_mpo_sum(&p).unwrap();
        assert_eq!(sum.len(), 12);
        for code in 0..4096usize {
            let idx: Vec<usize> = (0..6).rev().map(|k| (code >> (2 * k)) & 3).collect();
            let s = StackingSequence::from_indices(&idx);
            assert_abs_diff_eq!(sum.chain_value(&s).unwrap(), p.objective(&s).unwrap(), epsilon = 1e-11);
        }
    }

    #[test]
    fn bond_dimensions() {
        let p = sym_problem(8, LaminationPoint::zeros(true), all_constraints());
        let sum = loss_mpo_sum(&p).unwrap();
        let maxes: Vec<usize> = sum.terms().iter().map(DiagonalMpo::max_bond).collect();
        assert_eq!(maxes, vec![3, 3, 3, 3, 3, 3, 3, 3, 6, 4 * 2 + 2, 3, 3]);
    }

    #[test]
    fn stacked_equals_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = sym_problem(7, LaminationPoint::zeros(true), all_constraints());
        let sum = loss_mpo_sum(&p).unwrap();
        let stacked = sum.stacked().unwrap();
        for _ in 0..100 {
            let s = random_seq(7, 4, &mut rng);
            assert_abs_diff_eq!(stacked.chain_value(&s).unwrap(), sum.chain_value(&s).unwrap(), epsilon = 1e-11);
        }
    }
}
