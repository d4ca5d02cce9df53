//! Open-boundary matrix product states over real amplitudes.
//!
//! Site tensors are stored row-major as `(χ_left, d, χ_right)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, SsrError};
use crate::laminate::StackingSequence;
use crate::mpo::{DiagonalMpo, MpoSum};
use crate::tensor::{gemm, DenseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    d: usize,
    bonds: Vec<usize>,
    pub(crate) sites: Vec<Vec<f64>>,
    center: Option<usize>,
}

fn qr_thin(rows: usize, cols: usize, data: &[f64]) -> (usize, Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_row_slice(rows, cols, data);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    let k = q.ncols();
    let mut qv = vec![0.0; rows * k];
    for i in 0..rows {
        for j in 0..k {
            qv[i * k + j] = q[(i, j)];
        }
    }
    let mut rv = vec![0.0; k * cols];
    for i in 0..k {
        for j in 0..cols {
            rv[i * cols + j] = r[(i, j)];
        }
    }
    (k, qv, rv)
}

impl Mps {
    pub fn from_sites(d: usize, sites: Vec<Vec<f64>>, bonds: Vec<usize>, center: Option<usize>) -> Result<Self> {
        if d == 0 || sites.is_empty() {
            return domain("an MPS needs at least one site and a positive physical dimension");
        }
        if bonds.len() != sites.len() + 1 || bonds[0] != 1 || bonds[sites.len()] != 1 {
            return Err(SsrError::Shape(format!("bond extents {bonds:?} do not fit {} sites", sites.len())));
        }
        if bonds.contains(&0) {
            return Err(SsrError::Shape("bond extents must be positive".into()));
        }
        for (n, a) in sites.iter().enumerate() {
            if a.len() != bonds[n] * d * bonds[n + 1] {
                return Err(SsrError::Shape(format!(
                    "site {n} has {} entries, expected {}",
                    a.len(),
                    bonds[n] * d * bonds[n + 1]
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(SsrError::Numeric(format!("site {n} has non-finite entries")));
            }
        }
        if let Some(c) = center {
            if c >= sites.len() {
                return domain(format!("center {c} outside the chain"));
            }
        }
        Ok(Self {
            d,
            bonds,
            sites,
            center,
        })
    }

    /// Entries i.i.d. standard normal, bond extents `min(χ_init, d^n, d^(N-n))`,
    /// then right-canonicalized to site 0 and normalized.
    pub fn random(n_sites: usize, d: usize, chi_init: usize, seed: u64) -> Result<Self> {
        if n_sites == 0 || d == 0 {
            return domain("an MPS needs at least one site and a positive physical dimension");
        }
        if chi_init == 0 {
            return domain("initial bond dimension must be at least 1");
        }
        let cap = |k: usize| -> usize {
            let mut p = 1usize;
            for _ in 0..k {
                p = p.saturating_mul(d);
                if p >= chi_init {
                    return chi_init;
                }
            }
            p.min(chi_init)
        };
        let bonds: Vec<usize> = (0..=n_sites).map(|n| cap(n).min(cap(n_sites - n))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites = (0..n_sites)
            .map(|n| {
                (0..bonds[n] * d * bonds[n + 1])
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let mut mps = Self::from_sites(d, sites, bonds, None)?;
        // rescale the carried center at every step; long chains would otherwise
        // overflow or underflow before the final normalization
        for n in (1..n_sites).rev() {
            mps.move_center_left(n);
            let site = &mut mps.sites[n - 1];
            let f = site.iter().map(|x| x * x).sum::<f64>().sqrt();
            if f > 0.0 {
                site.iter_mut().for_each(|x| *x /= f);
            }
        }
        mps.center = Some(0);
        mps.normalize()?;
        Ok(mps)
    }

    /// Bond-1 state `|s_1 … s_N⟩` (labels 1-based).
    pub fn basis_state(seq: &StackingSequence, d: usize) -> Result<Self> {
        seq.check_for(d, seq.len())?;
        let sites = seq
            .labels()
            .iter()
            .map(|&l| {
                let mut v = vec![0.0; d];
                v[l - 1] = 1.0;
                v
            })
            .collect();
        Self::from_sites(d, sites, vec![1; seq.len() + 1], Some(0))
    }

    /// Bond-1 state from one local amplitude vector per site.
    pub fn product_state(d: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        let mut mps = Self::from_sites(d, vectors.to_vec(), vec![1; vectors.len() + 1], None)?;
        mps.canonicalize(0);
        mps.normalize()?;
        Ok(mps)
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn bonds(&self) -> &[usize] {
        &self.bonds
    }

    pub fn max_bond(&self) -> usize {
        self.bonds.iter().copied().max().unwrap_or(1)
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    pub fn site(&self, n: usize) -> &[f64] {
        &self.sites[n]
    }

    pub fn site_tensor(&self, n: usize) -> DenseTensor {
        DenseTensor::with_labels(
            vec![self.bonds[n], self.d, self.bonds[n + 1]],
            self.sites[n].clone(),
            vec!["left".into(), "phys".into(), "right".into()],
        )
        .expect("validated site")
    }

    pub(crate) fn set_pair(&mut self, n: usize, left: Vec<f64>, right: Vec<f64>, bond: usize, center: usize) {
        self.sites[n] = left;
        self.sites[n + 1] = right;
        self.bonds[n + 1] = bond;
        self.center = Some(center);
    }

    /// Two-site block `Θ[a, s1, s2, c]` at sites `(n, n+1)`.
    pub fn two_site_block(&self, n: usize) -> Vec<f64> {
        let (chl, chm, chr, d) = (self.bonds[n], self.bonds[n + 1], self.bonds[n + 2], self.d);
        let mut theta = vec![0.0; chl * d * d * chr];
        let b = &self.sites[n + 1];
        // (chl*d) x chm times chm x (d*chr)
        gemm(
            chl * d,
            chm,
            d * chr,
            1.0,
            &self.sites[n],
            (chm as isize, 1),
            b,
            ((d * chr) as isize, 1),
            0.0,
            &mut theta,
            ((d * chr) as isize, 1),
        );
        theta
    }

    /// QR gauge move of the center from `n` to `n + 1`.
    pub fn move_center_right(&mut self, n: usize) {
        let (chl, chr, d) = (self.bonds[n], self.bonds[n + 1], self.d);
        let (k, q, r) = qr_thin(chl * d, chr, &self.sites[n]);
        let next_r = self.bonds[n + 2];
        let mut next = vec![0.0; k * d * next_r];
        gemm(
            k,
            chr,
            d * next_r,
            1.0,
            &r,
            (chr as isize, 1),
            &self.sites[n + 1],
            ((d * next_r) as isize, 1),
            0.0,
            &mut next,
            ((d * next_r) as isize, 1),
        );
        self.sites[n] = q;
        self.sites[n + 1] = next;
        self.bonds[n + 1] = k;
        self.center = Some(n + 1);
    }

    /// LQ gauge move of the center from `n` to `n - 1`.
    pub fn move_center_left(&mut self, n: usize) {
        let (chl, chr, d) = (self.bonds[n], self.bonds[n + 1], self.d);
        let cols = d * chr;
        // A = L Q with A^T = Q' R'  ⇒  L = R'^T, Q = Q'^T
        let mut at = vec![0.0; cols * chl];
        for i in 0..chl {
            for j in 0..cols {
                at[j * chl + i] = self.sites[n][i * cols + j];
            }
        }
        let (k, qt, rt) = qr_thin(cols, chl, &at);
        let mut q = vec![0.0; k * cols];
        for i in 0..cols {
            for j in 0..k {
                q[j * cols + i] = qt[i * k + j];
            }
        }
        let prev_l = self.bonds[n - 1];
        let mut prev = vec![0.0; prev_l * d * k];
        // prev(prev_l*d × chl) · L(chl × k) with L = rt^T (rt is k × chl)
        gemm(
            prev_l * d,
            chl,
            k,
            1.0,
            &self.sites[n - 1],
            (chl as isize, 1),
            &rt,
            (1, chl as isize),
            0.0,
            &mut prev,
            (k as isize, 1),
        );
        self.sites[n] = q;
        self.sites[n - 1] = prev;
        self.bonds[n] = k;
        self.center = Some(n - 1);
    }

    /// Bring the chain into mixed-canonical form with center `c`.
    pub fn canonicalize(&mut self, c: usize) {
        assert!(c < self.n_sites(), "center outside the chain");
        for n in 0..c {
            self.move_center_right(n);
        }
        for n in (c + 1..self.n_sites()).rev() {
            self.move_center_left(n);
        }
        self.center = Some(c);
    }

    /// Gauge-only relocation of an existing center.
    pub fn shift_center(&mut self, target: usize) {
        match self.center {
            None => self.canonicalize(target),
            Some(mut c) => {
                while c < target {
                    self.move_center_right(c);
                    c += 1;
                }
                while c > target {
                    self.move_center_left(c);
                    c -= 1;
                }
            }
        }
    }

    pub fn overlap(&self, other: &Mps) -> Result<f64> {
        if self.n_sites() != other.n_sites() || self.d != other.d {
            return Err(SsrError::Shape("overlap of MPS on different chains".into()));
        }
        let d = self.d;
        let mut e = vec![1.0];
        for n in 0..self.n_sites() {
            let (al, ar) = (self.bonds[n], self.bonds[n + 1]);
            let (bl, br) = (other.bonds[n], other.bonds[n + 1]);
            let mut next = vec![0.0; ar * br];
            // next[a', b'] = Σ_{a,b,s} e[a,b] A[a,s,a'] B[b,s,b']
            let mut t = vec![0.0; al * br];
            for s in 0..d {
                // t = e(al × bl) · B_s(bl × br)
                gemm(
                    al,
                    bl,
                    br,
                    1.0,
                    &e,
                    (bl as isize, 1),
                    &other.sites[n][s * br..],
                    ((d * br) as isize, 1),
                    0.0,
                    &mut t,
                    (br as isize, 1),
                );
                // next += A_s^T(ar × al) · t
                gemm(
                    ar,
                    al,
                    br,
                    1.0,
                    &self.sites[n][s * ar..],
                    (1, (d * ar) as isize),
                    &t,
                    (br as isize, 1),
                    1.0,
                    &mut next,
                    (br as isize, 1),
                );
            }
            e = next;
        }
        Ok(e[0])
    }

    pub fn norm(&self) -> f64 {
        self.overlap(self).expect("same chain").max(0.0).sqrt()
    }

    /// Rescale to unit norm; the scale goes into the center (or site 0).
    pub fn normalize(&mut self) -> Result<()> {
        let nrm = self.norm();
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(SsrError::Numeric(format!("cannot normalize a state of norm {nrm}")));
        }
        let c = self.center.unwrap_or(0);
        self.sites[c].iter_mut().for_each(|x| *x /= nrm);
        Ok(())
    }

    /// `⟨ψ|Ĥ|ψ⟩ / ⟨ψ|ψ⟩` summed over all terms, by full contraction.
    pub fn expectation(&self, terms: &MpoSum) -> Result<f64> {
        self.check_terms(terms)?;
        let norm2 = self.overlap(self)?;
        if !(norm2 > 0.0) {
            return Err(SsrError::Numeric("expectation of a zero state".into()));
        }
        let mut total = 0.0;
        for term in terms.terms() {
            let mut l = vec![1.0];
            for n in 0..self.n_sites() {
                l = extend_left(&l, self, term, n);
            }
            total += l[0];
        }
        let e = total / norm2;
        if !e.is_finite() {
            return Err(SsrError::Numeric("non-finite expectation".into()));
        }
        Ok(e)
    }

    pub fn term_expectation(&self, term: &DiagonalMpo) -> Result<f64> {
        self.expectation(&MpoSum::new(vec![term.clone()])?)
    }

    pub(crate) fn check_terms(&self, terms: &MpoSum) -> Result<()> {
        for t in terms.terms() {
            if t.n_sites() != self.n_sites() || t.d() != self.d {
                return Err(SsrError::Shape(format!(
                    "term {} acts on {} sites of dimension {}, state has {} of dimension {}",
                    t.tag(),
                    t.n_sites(),
                    t.d(),
                    self.n_sites(),
                    self.d
                )));
            }
        }
        Ok(())
    }

    /// Amplitudes in big-endian label order (site 0 most significant).
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let total = (self.d as f64).powi(self.n_sites() as i32);
        if total > (1u64 << 24) as f64 {
            return Err(SsrError::Refused(format!("dense expansion of {total} amplitudes")));
        }
        // rows: label prefixes, cols: current right bond
        let mut acc = vec![1.0];
        let mut rows = 1usize;
        for n in 0..self.n_sites() {
            let (chl, chr) = (self.bonds[n], self.bonds[n + 1]);
            let mut next = vec![0.0; rows * self.d * chr];
            matmul_into(rows, chl, self.d * chr, &acc, &self.sites[n], &mut next);
            acc = next;
            rows *= self.d;
        }
        Ok(acc)
    }

    /// Label sequence of a bond-1 state, by largest local amplitude.
    pub fn extract_sequence(&self) -> Result<StackingSequence> {
        for (b, &x) in self.bonds.iter().enumerate() {
            if x != 1 {
                return Err(SsrError::NotCollapsed { bond: b, extent: x });
            }
        }
        let idx: Vec<usize> = self
            .sites
            .iter()
            .map(|a| {
                let mut best = 0;
                for (s, v) in a.iter().enumerate() {
                    if v.abs() > a[best].abs() {
                        best = s;
                    }
                }
                best
            })
            .collect();
        Ok(StackingSequence::from_indices(&idx))
    }

    /// `‖Σ_s A_s^T A_s − I‖_max` for site `n`.
    pub fn left_orthonormality_error(&self, n: usize) -> f64 {
        let (chl, chr, d) = (self.bonds[n], self.bonds[n + 1], self.d);
        let a = &self.sites[n];
        let mut worst: f64 = 0.0;
        for i in 0..chr {
            for j in 0..chr {
                let mut acc = 0.0;
                for r in 0..chl * d {
                    acc += a[r * chr + i] * a[r * chr + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    /// `‖Σ_s A_s A_s^T − I‖_max` for site `n`.
    pub fn right_orthonormality_error(&self, n: usize) -> f64 {
        let (chl, chr, d) = (self.bonds[n], self.bonds[n + 1], self.d);
        let a = &self.sites[n];
        let cols = d * chr;
        let mut worst: f64 = 0.0;
        for i in 0..chl {
            for j in 0..chl {
                let acc: f64 = (0..cols).map(|c| a[i * cols + c] * a[j * cols + c]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    /// Largest orthonormality defect given the recorded center.
    pub fn canonical_error(&self) -> f64 {
        let Some(c) = self.center else {
            return f64::INFINITY;
        };
        let left = (0..c).map(|n| self.left_orthonormality_error(n));
        let right = (c + 1..self.n_sites()).map(|n| self.right_orthonormality_error(n));
        left.chain(right).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> MpsJson {
        MpsJson {
            format: MPS_FORMAT.into(),
            version: 1,
            n_sites: self.n_sites(),
            d: self.d,
            center: self.center,
            sites: (0..self.n_sites())
                .map(|n| SiteJson {
                    shape: [self.bonds[n], self.d, self.bonds[n + 1]],
                    values: self.sites[n].clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(doc: &MpsJson) -> Result<Self> {
        if doc.format != MPS_FORMAT || doc.version != 1 {
            return domain(format!("unsupported MPS document {} v{}", doc.format, doc.version));
        }
        if doc.sites.len() != doc.n_sites {
            return Err(SsrError::Shape("site count does not match n_sites".into()));
        }
        let mut bonds = Vec::with_capacity(doc.n_sites + 1);
        for (n, s) in doc.sites.iter().enumerate() {
            if s.shape[1] != doc.d {
                return Err(SsrError::Shape(format!("site {n} physical extent {}", s.shape[1])));
            }
            if n == 0 {
                bonds.push(s.shape[0]);
            } else if bonds[n] != s.shape[0] {
                return Err(SsrError::Shape(format!("bond {n} extents disagree")));
            }
            bonds.push(s.shape[2]);
        }
        Self::from_sites(doc.d, doc.sites.iter().map(|s| s.values.clone()).collect(), bonds, doc.center)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_json())?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(s)?)
    }
}

const MPS_FORMAT: &str = "ssr-mps";

/// Portable MPS document: per-site `(χ_left, d, χ_right)` shapes with
/// row-major flat values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpsJson {
    pub format: String,
    pub version: u32,
    pub n_sites: usize,
    pub d: usize,
    pub center: Option<usize>,
    pub sites: Vec<SiteJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteJson {
    pub shape: [usize; 3],
    pub values: Vec<f64>,
}

fn matmul_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    crate::tensor::matmul(m, k, n, a, b, c);
}

/// `L[n+1]` from `L[n]` for one term; layouts `(b, χ, χ)`.
pub(crate) fn extend_left(l: &[f64], mps: &Mps, term: &DiagonalMpo, n: usize) -> Vec<f64> {
    let d = mps.d;
    let (chl, chr) = (mps.bonds[n], mps.bonds[n + 1]);
    let (bl, br) = (term.bonds()[n], term.bonds()[n + 1]);
    let a = &mps.sites[n];
    let w = term.site(n);
    let mut out = vec![0.0; br * chr * chr];
    let mut m = vec![0.0; chl * chl];
    let mut t = vec![0.0; chl * chr];
    for s in 0..d {
        for bo in 0..br {
            m.iter_mut().for_each(|x| *x = 0.0);
            let mut any = false;
            for bi in 0..bl {
                let c = w[(bi * br + bo) * d + s];
                if c != 0.0 {
                    any = true;
                    let lb = &l[bi * chl * chl..(bi + 1) * chl * chl];
                    for (mx, lx) in m.iter_mut().zip(lb) {
                        *mx += c * lx;
                    }
                }
            }
            if !any {
                continue;
            }
            // t = m · A_s
            gemm(
                chl,
                chl,
                chr,
                1.0,
                &m,
                (chl as isize, 1),
                &a[s * chr..],
                ((d * chr) as isize, 1),
                0.0,
                &mut t,
                (chr as isize, 1),
            );
            // out_bo += A_s^T · t
            gemm(
                chr,
                chl,
                chr,
                1.0,
                &a[s * chr..],
                (1, (d * chr) as isize),
                &t,
                (chr as isize, 1),
                1.0,
                &mut out[bo * chr * chr..],
                (chr as isize, 1),
            );
        }
    }
    out
}

/// `R[n]` from `R[n+1]` for one term; layouts `(b, χ, χ)`.
pub(crate) fn extend_right(r: &[f64], mps: &Mps, term: &DiagonalMpo, n: usize) -> Vec<f64> {
    let d = mps.d;
    let (chl, chr) = (mps.bonds[n], mps.bonds[n + 1]);
    let (bl, br) = (term.bonds()[n], term.bonds()[n + 1]);
    let a = &mps.sites[n];
    let w = term.site(n);
    let mut out = vec![0.0; bl * chl * chl];
    let mut m = vec![0.0; chr * chr];
    let mut t = vec![0.0; chl * chr];
    for s in 0..d {
        for bi in 0..bl {
            m.iter_mut().for_each(|x| *x = 0.0);
            let mut any = false;
            for bo in 0..br {
                let c = w[(bi * br + bo) * d + s];
                if c != 0.0 {
                    any = true;
                    let rb = &r[bo * chr * chr..(bo + 1) * chr * chr];
                    for (mx, rx) in m.iter_mut().zip(rb) {
                        *mx += c * rx;
                    }
                }
            }
            if !any {
                continue;
            }
            // t = A_s · m
            gemm(
                chl,
                chr,
                chr,
                1.0,
                &a[s * chr..],
                ((d * chr) as isize, 1),
                &m,
                (chr as isize, 1),
                0.0,
                &mut t,
                (chr as isize, 1),
            );
            // out_bi += t · A_s^T
            gemm(
                chl,
                chr,
                chl,
                1.0,
                &t,
                (chr as isize, 1),
                &a[s * chr..],
                (1, (d * chr) as isize),
                1.0,
                &mut out[bi * chl * chl..],
                (chl as isize, 1),
            );
        }
    }
    out
}

/// Cached left and right environments, one chain of each per MPO term.
/// `left[t][n]` covers sites `0..n`, `right[t][n]` covers sites `n..N`;
/// an empty vector marks a stale entry.
#[derive(Clone, Debug)]
pub struct Environment {
    pub(crate) left: Vec<Vec<Vec<f64>>>,
    pub(crate) right: Vec<Vec<Vec<f64>>>,
}

impl Environment {
    pub fn left(&self, term: usize, n: usize) -> Option<&[f64]> {
        let v = &self.left[term][n];
        (!v.is_empty()).then_some(v.as_slice())
    }

    pub fn right(&self, term: usize, n: usize) -> Option<&[f64]> {
        let v = &self.right[term][n];
        (!v.is_empty()).then_some(v.as_slice())
    }

    /// Recompute `L[n+1]` after site `n` became left-orthonormal.
    pub fn update_left(&mut self, mps: &Mps, terms: &MpoSum, n: usize) {
        for (t, term) in terms.terms().iter().enumerate() {
            let next = extend_left(&self.left[t][n], mps, term, n);
            self.left[t][n + 1] = next;
        }
    }

    /// Recompute `R[n]` after site `n` became right-orthonormal.
    pub fn update_right(&mut self, mps: &Mps, terms: &MpoSum, n: usize) {
        for (t, term) in terms.terms().iter().enumerate() {
            let next = extend_right(&self.right[t][n + 1], mps, term, n);
            self.right[t][n] = next;
        }
    }
}

/// Environments for a two-site block at `(center, center + 1)`: all
/// `L[0..=center]` and `R[center+2..=N]`.
pub fn rebuild_environments(mps: &Mps, terms: &MpoSum, center: usize) -> Result<Environment> {
    mps.check_terms(terms)?;
    let n = mps.n_sites();
    if n < 2 || center + 1 >= n {
        return domain(format!("no two-site block at {center} in a chain of {n}"));
    }
    let mut env = Environment {
        left: vec![vec![Vec::new(); n + 1]; terms.len()],
        right: vec![vec![Vec::new(); n + 1]; terms.len()],
    };
    for t in 0..terms.len() {
        env.left[t][0] = vec![1.0];
        env.right[t][n] = vec![1.0];
    }
    for k in 0..center {
        env.update_left(mps, terms, k);
    }
    for k in (center + 2..n).rev() {
        env.update_right(mps, terms, k);
    }
    Ok(env)
}
