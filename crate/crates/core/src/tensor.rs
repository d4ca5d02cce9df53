//! Dense real tensors with positional contraction and truncated SVD.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};

/// Row-major dense tensor with opaque axis labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    labels: Vec<String>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let labels = (0..shape.len()).map(|i| format!("ax{i}")).collect();
        Self::with_labels(shape, data, labels)
    }

    pub fn with_labels(shape: Vec<usize>, data: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let size: usize = shape.iter().product();
        if data.len() != size {
            return Err(SsrError::Shape(format!(
                "shape {shape:?} needs {size} values, got {}",
                data.len()
            )));
        }
        if labels.len() != shape.len() {
            return Err(SsrError::Shape(format!(
                "{} labels for {} axes",
                labels.len(),
                shape.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(SsrError::Numeric("tensor contains non-finite values".into()));
        }
        Ok(Self {
            shape,
            data,
            labels,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let size = shape.iter().product();
        Self::new(shape, vec![0.0; size]).expect("consistent zeros")
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(x: f64) -> Self {
        Self::new(vec![], vec![x]).expect("scalar")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn axis_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    fn offset(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let labels = (0..shape.len()).map(|i| format!("ax{i}")).collect();
        Self::with_labels(shape, self.data, labels)
    }

    /// Axes reordered so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(SsrError::Shape(format!("{perm:?} is not a permutation of {r} axes")));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let labels: Vec<String> = perm.iter().map(|&p| self.labels[p].clone()).collect();
        let in_strides = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let size = self.data.len();
        let mut data = Vec::with_capacity(size);
        let mut index = vec![0usize; r];
        let mut src = 0usize;
        for _ in 0..size {
            data.push(self.data[src]);
            for ax in (0..r).rev() {
                index[ax] += 1;
                src += src_strides[ax];
                if index[ax] < shape[ax] {
                    break;
                }
                src -= src_strides[ax] * shape[ax];
                index[ax] = 0;
            }
        }
        Ok(Self {
            shape,
            data,
            labels,
        })
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Row-major `c = a · b` for an `m × k` and a `k × n` matrix.
pub(crate) fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, k, n, 1.0, a, (k as isize, 1), b, (n as isize, 1), 0.0, c, (n as isize, 1));
}

/// Strided `c = alpha · a · b + beta · c`; strides are `(row, col)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
    c_strides: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = i as isize * c_strides.0 + j as isize * c_strides.1;
                c[idx as usize] *= beta;
            }
        }
        return;
    }
    let span = |rows: usize, cols: usize, s: (isize, isize)| {
        (rows as isize - 1) * s.0 + (cols as isize - 1) * s.1 + 1
    };
    assert!(a.len() as isize >= span(m, k, a_strides));
    assert!(b.len() as isize >= span(k, n, b_strides));
    assert!(c.len() as isize >= span(m, n, c_strides));
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_strides.0,
            c_strides.1,
        );
    }
}

/// Contract `a` and `b` over the listed `(axis of a, axis of b)` pairs.
/// Output axes are the free axes of `a` followed by the free axes of `b`.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    for &(i, j) in pairs {
        if i >= a.rank() || j >= b.rank() {
            return Err(SsrError::Shape(format!("axis pair ({i}, {j}) out of range")));
        }
        if a.shape[i] != b.shape[j] {
            return Err(SsrError::Shape(format!(
                "paired axes ({i}, {j}) have extents {} and {}",
                a.shape[i], b.shape[j]
            )));
        }
    }
    let paired_a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let paired_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let free_a: Vec<usize> = (0..a.rank()).filter(|i| !paired_a.contains(i)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|i| !paired_b.contains(i)).collect();
    if free_a.len() + paired_a.len() != a.rank() || free_b.len() + paired_b.len() != b.rank() {
        return Err(SsrError::Shape("an axis is paired more than once".into()));
    }

    let perm_a: Vec<usize> = free_a.iter().chain(&paired_a).copied().collect();
    let perm_b: Vec<usize> = paired_b.iter().chain(&free_b).copied().collect();
    let ap = a.permute(&perm_a)?;
    let bp = b.permute(&perm_b)?;
    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = paired_a.iter().map(|&i| a.shape[i]).product();
    let n: usize = free_b.iter().map(|&i| b.shape[i]).product();
    let mut out = vec![0.0; m * n];
    matmul(m, k, n, &ap.data, &bp.data, &mut out);

    let shape = free_a
        .iter()
        .map(|&i| a.shape[i])
        .chain(free_b.iter().map(|&i| b.shape[i]))
        .collect();
    let labels = free_a
        .iter()
        .map(|&i| a.labels[i].clone())
        .chain(free_b.iter().map(|&i| b.labels[i].clone()))
        .collect();
    DenseTensor::with_labels(shape, out, labels)
}

/// Rank and threshold limits applied to singular values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub max_rank: usize,
    /// Values with `s_i / s_1 < cutoff` are dropped.
    pub cutoff: f64,
    pub renormalize: bool,
}

impl TruncationPolicy {
    pub fn new(max_rank: usize, cutoff: f64, renormalize: bool) -> Result<Self> {
        if max_rank == 0 {
            return Err(SsrError::Domain("max_rank must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&cutoff) {
            return Err(SsrError::Domain(format!("cutoff {cutoff} outside [0, 1)")));
        }
        Ok(Self {
            max_rank,
            cutoff,
            renormalize,
        })
    }

    pub fn rank_only(max_rank: usize) -> Self {
        Self {
            max_rank: max_rank.max(1),
            cutoff: 0.0,
            renormalize: false,
        }
    }
}

/// Truncated factorization `a ≈ u · diag(s) · vt` of a row-major matrix.
#[derive(Clone, Debug)]
pub struct MatrixSvd {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// `rows × rank`, row-major
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// `rank × cols`, row-major
    pub vt: Vec<f64>,
    pub discarded_weight: f64,
}

pub fn svd_matrix(rows: usize, cols: usize, data: &[f64], policy: &TruncationPolicy) -> Result<MatrixSvd> {
    if data.len() != rows * cols {
        return Err(SsrError::Shape(format!(
            "{rows}x{cols} matrix needs {} values, got {}",
            rows * cols,
            data.len()
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(SsrError::Numeric("SVD input contains non-finite values".into()));
    }
    let m = DMatrix::from_row_slice(rows, cols, data);
    let svd = m
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| SsrError::Numeric("SVD did not converge".into()))?;
    let u_full = svd.u.expect("u requested");
    let vt_full = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));
    let s_sorted: Vec<f64> = order.iter().map(|&i| sv[i].max(0.0)).collect();
    let largest = s_sorted.first().copied().unwrap_or(0.0);

    let mut keep = s_sorted.len().min(policy.max_rank).max(1);
    if largest > 0.0 {
        let above = s_sorted
            .iter()
            .take_while(|&&s| s / largest >= policy.cutoff)
            .count()
            .max(1);
        keep = keep.min(above);
    }
    keep = keep.min(s_sorted.len());

    let total: f64 = s_sorted.iter().map(|s| s * s).sum();
    let kept_weight: f64 = s_sorted[..keep].iter().map(|s| s * s).sum();
    let discarded_weight: f64 = s_sorted[keep..].iter().map(|s| s * s).sum();
    let mut s: Vec<f64> = s_sorted[..keep].to_vec();
    if policy.renormalize && kept_weight > 0.0 {
        let scale = (total / kept_weight).sqrt();
        for x in &mut s {
            *x *= scale;
        }
    }

    let mut u = vec![0.0; rows * keep];
    for r in 0..rows {
        for (c, &src) in order[..keep].iter().enumerate() {
            u[r * keep + c] = u_full[(r, src)];
        }
    }
    let mut vt = vec![0.0; keep * cols];
    for (r, &src) in order[..keep].iter().enumerate() {
        for c in 0..cols {
            vt[r * cols + c] = vt_full[(src, c)];
        }
    }
    Ok(MatrixSvd {
        rows,
        cols,
        rank: keep,
        u,
        s,
        vt,
        discarded_weight,
    })
}

/// Result of [`svd_truncate`]: `u` carries the left axes plus a new bond
/// axis, `v` the bond axis plus the remaining axes.
#[derive(Clone, Debug)]
pub struct TensorSvd {
    pub u: DenseTensor,
    pub s: Vec<f64>,
    pub v: DenseTensor,
    pub discarded_weight: f64,
}

/// Group `left_axes` against the remaining axes and factorize.
pub fn svd_truncate(t: &DenseTensor, left_axes: &[usize], policy: &TruncationPolicy) -> Result<TensorSvd> {
    let right_axes: Vec<usize> = (0..t.rank()).filter(|i| !left_axes.contains(i)).collect();
    let perm: Vec<usize> = left_axes.iter().chain(&right_axes).copied().collect();
    let p = t.permute(&perm)?;
    let rows: usize = left_axes.iter().map(|&i| t.shape[i]).product();
    let cols: usize = right_axes.iter().map(|&i| t.shape[i]).product();
    let f = svd_matrix(rows, cols, &p.data, policy)?;

    let mut u_shape: Vec<usize> = left_axes.iter().map(|&i| t.shape[i]).collect();
    u_shape.push(f.rank);
    let mut u_labels: Vec<String> = left_axes.iter().map(|&i| t.labels[i].clone()).collect();
    u_labels.push("bond".into());
    let mut v_shape = vec![f.rank];
    v_shape.extend(right_axes.iter().map(|&i| t.shape[i]));
    let mut v_labels = vec!["bond".to_string()];
    v_labels.extend(right_axes.iter().map(|&i| t.labels[i].clone()));

    Ok(TensorSvd {
        u: DenseTensor::with_labels(u_shape, f.u, u_labels)?,
        s: f.s,
        v: DenseTensor::with_labels(v_shape, f.vt, v_labels)?,
        discarded_weight: f.discarded_weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
        let n = shape.iter().product();
        DenseTensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matrix_times_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random(vec![3, 4], &mut rng);
        let out = contract(&m, &DenseTensor::identity(4), &[(1, 0)]).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn vector_dot_product() {
        let a = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = DenseTensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let out = contract(&a, &b, &[(0, 0)]).unwrap();
        assert_eq!(out.rank(), 0);
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matrix_product_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(vec![3, 4], &mut rng);
        let b = random(vec![4, 5], &mut rng);
        let out = contract(&a, &b, &[(1, 0)]).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(&[i, k]) * b.get(&[k, j]);
                }
                assert_abs_diff_eq!(out.get(&[i, j]), acc, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn extent_mismatch_is_a_shape_error() {
        let a = DenseTensor::zeros(vec![2, 3]);
        let b = DenseTensor::zeros(vec![2, 3]);
        assert!(matches!(contract(&a, &b, &[(1, 0)]), Err(SsrError::Shape(_))));
    }

    #[test]
    fn non_finite_tensor_rejected() {
        assert!(matches!(
            DenseTensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(SsrError::Numeric(_))
        ));
    }

    #[test]
    fn permute_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random(vec![2, 3, 4], &mut rng);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.data(), t.data());
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, 2.0, -1.0, 0.5];
        let v = [0.3, -0.7, 2.0];
        let data: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let t = DenseTensor::new(vec![4, 3], data).unwrap();
        let f = svd_truncate(&t, &[0], &TruncationPolicy::rank_only(5)).unwrap();
        assert!(f.s[0] > 1.0);
        for s in &f.s[1..] {
            assert!(*s <= 1e-12);
        }
    }

    #[test]
    fn identity_truncated_to_rank_two() {
        let f = svd_truncate(&DenseTensor::identity(4), &[0], &TruncationPolicy::rank_only(2)).unwrap();
        assert_eq!(f.s.len(), 2);
        assert_abs_diff_eq!(f.discarded_weight, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cutoff_is_relative_to_largest() {
        let t = DenseTensor::new(vec![3, 3], vec![4.0, 0.0, 0.0, 0.0, 2.1, 0.0, 0.0, 0.0, 1.9]).unwrap();
        let f = svd_truncate(&t, &[0], &TruncationPolicy::new(3, 0.5, false).unwrap()).unwrap();
        assert_eq!(f.s.len(), 2);
        assert_abs_diff_eq!(f.discarded_weight, 1.9 * 1.9, epsilon = 1e-12);
        let f = svd_truncate(&t, &[0], &TruncationPolicy::new(3, 0.5, true).unwrap()).unwrap();
        let kept: f64 = f.s.iter().map(|s| s * s).sum();
        assert_abs_diff_eq!(kept, 16.0 + 2.1 * 2.1 + 1.9 * 1.9, epsilon = 1e-10);
    }

    #[test]
    fn policy_validation() {
        assert!(TruncationPolicy::new(0, 0.0, false).is_err());
        assert!(TruncationPolicy::new(1, 1.0, false).is_err());
        assert!(TruncationPolicy::new(1, -0.1, false).is_err());
    }

    fn reconstruct(f: &TensorSvd) -> Vec<f64> {
        let rows = f.u.data().len() / f.s.len();
        let cols = f.v.data().len() / f.s.len();
        let k = f.s.len();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                for r in 0..k {
                    out[i * cols + j] += f.u.data()[i * k + r] * f.s[r] * f.v.data()[r * cols + j];
                }
            }
        }
        out
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random(vec![8, 8], &mut rng);
        let f = svd_truncate(&t, &[0], &TruncationPolicy::rank_only(8)).unwrap();
        let err: f64 = reconstruct(&f)
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-10, "reconstruction error {err}");
        for w in f.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn truncation_error_equals_discarded_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (rows, cols, rank) in [(6, 9, 3), (9, 6, 2), (5, 5, 1), (12, 4, 4)] {
            let t = random(vec![rows, cols], &mut rng);
            let f = svd_truncate(&t, &[0], &TruncationPolicy::rank_only(rank)).unwrap();
            let err: f64 = reconstruct(&f)
                .iter()
                .zip(t.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert_abs_diff_eq!(err, f.discarded_weight, epsilon = 1e-10);
        }
    }

    #[test]
    fn grouped_axes_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random(vec![2, 3, 4], &mut rng);
        let f = svd_truncate(&t, &[0, 2], &TruncationPolicy::rank_only(100)).unwrap();
        assert_eq!(f.u.shape(), &[2, 4, 3]);
        assert_eq!(f.v.shape(), &[3, 3]);
        let us = {
            let mut u = f.u.clone().into_data();
            for (i, x) in u.iter_mut().enumerate() {
                *x *= f.s[i % 3];
            }
            DenseTensor::new(vec![2, 4, 3], u).unwrap()
        };
        let back = contract(&us, &f.v, &[(2, 0)]).unwrap();
        let back = back.permute(&[0, 2, 1]).unwrap();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
