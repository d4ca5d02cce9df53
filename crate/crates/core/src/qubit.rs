//! Two-qubit-per-ply encoding and Pauli-Z expansion of the diagonal cost.
//!
//! Ply `n` (0-based) occupies qubits `2n` and `2n + 1`; the first qubit holds
//! the first bit of the code `1 → 00, 2 → 01, 3 → 11, 4 → 10`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::laminate::{ConstraintSpec, SsrProblem, StackingSequence};

const CODE: [[bool; 2]; 4] = [[false, false], [false, true], [true, true], [true, false]];
const DROP_TOL: f64 = 1e-14;

fn require_quad(d: usize) -> Result<()> {
    if d != 4 {
        return Err(SsrError::Unsupported(format!("qubit encoding needs 4 angles, got {d}")));
    }
    Ok(())
}

pub fn encode(seq: &StackingSequence, d: usize) -> Result<Vec<bool>> {
    require_quad(d)?;
    seq.check_for(d, seq.len())?;
    Ok(seq.labels().iter().flat_map(|&l| CODE[l - 1]).collect())
}

pub fn decode(bits: &[bool]) -> Result<StackingSequence> {
    if !bits.len().is_multiple_of(2) {
        return Err(SsrError::Shape(format!("odd bitstring length {}", bits.len())));
    }
    let idx: Vec<usize> = bits
        .chunks(2)
        .map(|p| CODE.iter().position(|c| c[..] == *p).expect("all codes present"))
        .collect();
    Ok(StackingSequence::from_indices(&idx))
}

pub fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliZTerm {
    pub support: Vec<usize>,
    pub coefficient: f64,
}

impl PauliZTerm {
    pub fn weight(&self) -> usize {
        self.support.len()
    }

    /// Eigenvalue of the Z string on a computational basis state.
    pub fn sign(&self, bits: &[bool]) -> f64 {
        let odd = self.support.iter().filter(|&&q| bits[q]).count() % 2 == 1;
        if odd {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliExpansion {
    pub n_qubits: usize,
    pub offset: f64,
    /// Non-identity terms, sorted by support.
    pub terms: Vec<PauliZTerm>,
}

impl PauliExpansion {
    pub fn evaluate(&self, bits: &[bool]) -> Result<f64> {
        if bits.len() != self.n_qubits {
            return Err(SsrError::Shape(format!("{} bits for {} qubits", bits.len(), self.n_qubits)));
        }
        Ok(self.offset + self.terms.iter().map(|t| t.coefficient * t.sign(bits)).sum::<f64>())
    }

    /// Flat `{support, coefficient}` list; the offset appears with empty support.
    pub fn to_json_list(&self) -> Result<String> {
        let mut all = Vec::with_capacity(self.terms.len() + 1);
        all.push(PauliZTerm {
            support: vec![],
            coefficient: self.offset,
        });
        all.extend(self.terms.iter().cloned());
        Ok(serde_json::to_string_pretty(&all)?)
    }

    pub fn supports(&self) -> impl Iterator<Item = &[usize]> {
        self.terms.iter().map(|t| t.support.as_slice())
    }
}

/// Sparse polynomial in commuting Z operators keyed by sorted support.
#[derive(Clone, Debug, Default)]
struct ZPoly(BTreeMap<Vec<usize>, f64>);

fn sym_diff(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl ZPoly {
    fn add(&mut self, support: Vec<usize>, c: f64) {
        *self.0.entry(support).or_insert(0.0) += c;
    }

    fn add_poly(&mut self, other: &ZPoly, scale: f64) {
        for (s, c) in &other.0 {
            self.add(s.clone(), scale * c);
        }
    }

    fn mul(&self, other: &ZPoly) -> ZPoly {
        let mut out = ZPoly::default();
        for (a, ca) in &self.0 {
            for (b, cb) in &other.0 {
                out.add(sym_diff(a, b), ca * cb);
            }
        }
        out
    }

    /// Expansion of a function of the two qubits of ply `n`, given per label.
    fn ply_function(n: usize, values: &[f64; 4]) -> ZPoly {
        let (q0, q1) = (2 * n, 2 * n + 1);
        let mut out = ZPoly::default();
        for mask in 0..4u8 {
            let mut c = 0.0;
            for (label, code) in CODE.iter().enumerate() {
                let mut sign = 1.0;
                if mask & 2 != 0 && code[0] {
                    sign = -sign;
                }
                if mask & 1 != 0 && code[1] {
                    sign = -sign;
                }
                c += sign * values[label];
            }
            let mut support = Vec::new();
            if mask & 2 != 0 {
                support.push(q0);
            }
            if mask & 1 != 0 {
                support.push(q1);
            }
            out.add(support, c / 4.0);
        }
        out
    }

    fn into_expansion(self, n_qubits: usize) -> PauliExpansion {
        let mut offset = 0.0;
        let mut terms = Vec::new();
        for (support, coefficient) in self.0 {
            if support.is_empty() {
                offset = coefficient;
            } else if coefficient.abs() > DROP_TOL {
                terms.push(PauliZTerm { support, coefficient });
            }
        }
        PauliExpansion {
            n_qubits,
            offset,
            terms,
        }
    }
}

/// Z-string expansion of the loss, optionally with every disorientation penalty
/// of `problem`. Other constraint kinds are never expanded.
pub fn pauli_expand(problem: &SsrProblem, include_disorientation: bool) -> Result<PauliExpansion> {
    require_quad(problem.d())?;
    let n = problem.n_plies();
    let f = problem.angle_set().ply_function_table();
    let mut total = ZPoly::default();
    for comp in problem.components() {
        let weights = problem
            .weights()
            .block(comp.block)
            .ok_or_else(|| SsrError::Domain(format!("no weights for block {}", comp.block)))?;
        let xi = problem.target().get(comp).unwrap_or(0.0);
        let mut lin = ZPoly::default();
        lin.add(vec![], -xi);
        for (ply, alpha) in weights.iter().enumerate() {
            let vals = [0, 1, 2, 3].map(|s| alpha * f[s][comp.l - 1]);
            lin.add_poly(&ZPoly::ply_function(ply, &vals), 1.0);
        }
        total.add_poly(&lin.mul(&lin), 1.0);
    }
    if include_disorientation {
        for c in problem.constraints() {
            if let ConstraintSpec::Disorientation { max_delta_deg, gamma } = *c {
                let pairs = ConstraintSpec::violation_pairs(problem.angle_set(), max_delta_deg);
                for ply in 0..n.saturating_sub(1) {
                    for &(a, b) in &pairs {
                        let mut pa = [0.0; 4];
                        pa[a - 1] = 1.0;
                        let mut pb = [0.0; 4];
                        pb[b - 1] = 1.0;
                        let prod = ZPoly::ply_function(ply, &pa).mul(&ZPoly::ply_function(ply + 1, &pb));
                        total.add_poly(&prod, gamma);
                    }
                }
            }
        }
    }
    Ok(total.into_expansion(2 * n))
}

/// Diagonal of the expanded operator in sequence order (same indexing as the
/// oracle's dense diagonal).
pub fn dense_from_expansion(expansion: &PauliExpansion) -> Result<Vec<f64>> {
    let n = expansion.n_qubits / 2;
    if n > 10 {
        return Err(SsrError::Refused(format!("dense diagonal of 4^{n} entries is too large")));
    }
    let size = 1usize << (2 * n);
    let mut out = Vec::with_capacity(size);
    let mut bits = vec![false; 2 * n];
    for idx in 0..size {
        let mut rest = idx;
        for ply in (0..n).rev() {
            let code = CODE[rest % 4];
            bits[2 * ply] = code[0];
            bits[2 * ply + 1] = code[1];
            rest /= 4;
        }
        out.push(expansion.evaluate(&bits)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCensus {
    /// `by_weight[w]` counts terms with `w` Z operators (index 0 unused).
    pub by_weight: Vec<usize>,
    pub terms: usize,
    pub cnots: usize,
    pub rotations: usize,
}

impl TermCensus {
    pub fn count(&self, weight: usize) -> usize {
        self.by_weight.get(weight).copied().unwrap_or(0)
    }
}

pub fn term_census(expansion: &PauliExpansion) -> TermCensus {
    let max_w = expansion.terms.iter().map(PauliZTerm::weight).max().unwrap_or(0);
    let mut by_weight = vec![0; max_w + 1];
    let mut cnots = 0;
    for t in &expansion.terms {
        by_weight[t.weight()] += 1;
        cnots += 2 * t.weight();
    }
    TermCensus {
        by_weight,
        terms: expansion.terms.len(),
        cnots,
        rotations: expansion.terms.len(),
    }
}
