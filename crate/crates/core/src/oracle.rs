//! Exhaustive ground truth for small chains.
//!
//! Sequences are indexed big-endian: site 0 is the most significant digit and
//! enumeration runs in lexicographic label order.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::laminate::{SsrProblem, StackingSequence};
use crate::mpo::MpoSum;

pub const EXHAUSTIVE_LIMIT: f64 = 1e7;
pub const DENSE_LIMIT: usize = 1 << 20;
const ARGMIN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub min_loss: f64,
    pub argmin_set: Vec<StackingSequence>,
    pub histogram: Option<LossSummary>,
}

fn space_size(d: usize, n: usize) -> f64 {
    (d as f64).powi(n as i32)
}

/// Big-endian index of a sequence.
pub fn sequence_index(seq: &StackingSequence, d: usize) -> usize {
    seq.labels().iter().fold(0, |acc, &l| acc * d + (l - 1))
}

pub fn index_to_sequence(mut index: usize, d: usize, n: usize) -> StackingSequence {
    let mut idx = vec![0; n];
    for k in (0..n).rev() {
        idx[k] = index % d;
        index /= d;
    }
    StackingSequence::from_indices(&idx)
}

/// Minimum of the loss (optionally plus penalties) over all `d^N` sequences.
pub fn exhaustive_min(problem: &SsrProblem, include_penalties: bool) -> Result<OracleResult> {
    let (d, n) = (problem.d(), problem.n_plies());
    let size = space_size(d, n);
    if size > EXHAUSTIVE_LIMIT {
        return Err(SsrError::Refused(format!(
            "exhaustive search over {size:.3e} sequences exceeds {EXHAUSTIVE_LIMIT:.0e}"
        )));
    }
    let table = problem.angle_set().ply_function_table();
    let comps = problem.components();
    let xi: Vec<f64> = comps.iter().map(|&c| problem.target().get(c).unwrap_or(0.0)).collect();
    let weights: Vec<&[f64]> = comps
        .iter()
        .map(|c| problem.weights().block(c.block).expect("component block present"))
        .collect();
    let k = comps.len();
    let use_penalty = include_penalties && !problem.constraints().is_empty();

    // prefix[depth] holds the partial lamination sums after `depth` plies
    let mut prefix = vec![vec![0.0; k]; n + 1];
    let mut idx = vec![0usize; n];
    let mut best = f64::INFINITY;
    let mut candidates: Vec<(f64, StackingSequence)> = Vec::new();
    let (mut count, mut sum, mut max) = (0usize, 0.0f64, f64::NEG_INFINITY);

    let mut depth = 0usize;
    idx[0] = 0;
    loop {
        // descend filling prefix sums
        while depth < n {
            let s = idx[depth];
            for c in 0..k {
                let l = comps[c].l - 1;
                prefix[depth + 1][c] = prefix[depth][c] + weights[c][depth] * table[s][l];
            }
            depth += 1;
            if depth < n {
                idx[depth] = 0;
            }
        }
        let mut value: f64 = prefix[n].iter().zip(&xi).map(|(v, x)| (v - x) * (v - x)).sum();
        let seq_opt = if use_penalty {
            let seq = StackingSequence::from_indices(&idx);
            value += problem.penalty(&seq)?;
            Some(seq)
        } else {
            None
        };
        count += 1;
        sum += value;
        max = max.max(value);
        if value <= best + ARGMIN_TOL {
            best = best.min(value);
            let seq = seq_opt.unwrap_or_else(|| StackingSequence::from_indices(&idx));
            candidates.push((value, seq));
            if candidates.len() > 4096 {
                candidates.retain(|(v, _)| *v <= best + ARGMIN_TOL);
            }
        }
        // odometer increment
        loop {
            if depth == 0 {
                let argmin_set: Vec<StackingSequence> = candidates
                    .into_iter()
                    .filter(|(v, _)| *v <= best + ARGMIN_TOL)
                    .map(|(_, s)| s)
                    .collect();
                return Ok(OracleResult {
                    min_loss: best,
                    argmin_set,
                    histogram: Some(LossSummary {
                        count,
                        mean: sum / count as f64,
                        min: best,
                        max,
                    }),
                });
            }
            depth -= 1;
            idx[depth] += 1;
            if idx[depth] < d {
                break;
            }
        }
    }
}

/// Diagonal of `Σ terms` over all sequences, big-endian indexed.
pub fn dense_diagonal(problem: &SsrProblem, terms: &MpoSum) -> Result<Vec<f64>> {
    let (d, n) = (problem.d(), problem.n_plies());
    if space_size(d, n) > DENSE_LIMIT as f64 {
        return Err(SsrError::Refused(format!("dense diagonal of {d}^{n} entries exceeds 2^20")));
    }
    if terms.n_sites().is_some_and(|m| m != n) || terms.d().is_some_and(|e| e != d) {
        return Err(SsrError::Shape("operator does not act on the problem's chain".into()));
    }
    let size = d.pow(n as u32);
    let mut out = vec![0.0; size];
    for term in terms.terms() {
        // vectors[depth] is the row vector after `depth` sites
        let mut vectors: Vec<Vec<f64>> = term.bonds().iter().map(|&b| vec![0.0; b]).collect();
        vectors[0][0] = 1.0;
        let mut idx = vec![0usize; n];
        let mut depth = 0;
        let mut position = 0usize;
        loop {
            while depth < n {
                let s = idx[depth];
                let br = term.bonds()[depth + 1];
                let w = term.site(depth);
                let (done, rest) = vectors.split_at_mut(depth + 1);
                let (prev, next) = (&done[depth], &mut rest[0]);
                next.iter_mut().for_each(|x| *x = 0.0);
                for (i, &vi) in prev.iter().enumerate() {
                    if vi != 0.0 {
                        for (j, nj) in next.iter_mut().enumerate() {
                            *nj += vi * w[(i * br + j) * d + s];
                        }
                    }
                }
                depth += 1;
                if depth < n {
                    idx[depth] = 0;
                }
            }
            out[position] += vectors[n][0];
            position += 1;
            loop {
                if depth == 0 {
                    break;
                }
                depth -= 1;
                idx[depth] += 1;
                if idx[depth] < d {
                    break;
                }
            }
            if depth == 0 && idx[0] >= d {
                break;
            }
        }
    }
    Ok(out)
}

/// All sequences that satisfy every constraint, in lexicographic order.
pub fn enumerate_valid(problem: &SsrProblem) -> impl Iterator<Item = StackingSequence> + '_ {
    let (d, n) = (problem.d(), problem.n_plies());
    let mut idx = vec![0usize; n];
    let mut done = n == 0;
    std::iter::from_fn(move || {
        while !done {
            let seq = StackingSequence::from_indices(&idx);
            let mut k = n;
            loop {
                if k == 0 {
                    done = true;
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < d {
                    break;
                }
                idx[k] = 0;
            }
            if problem.is_feasible(&seq) {
                return Some(seq);
            }
        }
        None
    })
}
