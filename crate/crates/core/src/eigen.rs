//! Lanczos iteration with full reorthogonalization for the lowest eigenpair
//! of a symmetric operator given only as a matrix-vector product.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SsrError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanczosOptions {
    /// Residual bound `‖Av − λv‖ ≤ tol · max(1, |λ|)`.
    pub tol: f64,
    /// Budget of operator applications.
    pub max_iter: usize,
    /// Largest Krylov basis kept before restarting from the current Ritz vector.
    pub krylov_dim: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            krylov_dim: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub matvecs: usize,
    /// Rayleigh quotient of the normalized start vector.
    pub start_rayleigh: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for v in basis {
            let c = dot(v, w);
            axpy(-c, v, w);
        }
    }
}

/// Lowest eigenpair starting from a random vector drawn from `seed`.
pub fn smallest_eigenpair<F>(apply: F, dim: usize, tol: f64, max_iter: usize, seed: u64) -> Result<Eigenpair>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let opts = LanczosOptions {
        tol,
        max_iter,
        seed,
        ..LanczosOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = random_unit(dim.max(1), &mut rng);
    smallest_eigenpair_from(apply, &start, &opts)
}

/// Lowest eigenpair with the Krylov space seeded by `start`.
///
/// The returned value never exceeds the Rayleigh quotient of `start`. When
/// the Krylov space becomes invariant before convergence, a random vector
/// orthogonal to the current basis is appended and the iteration continues.
/// On exhausting `max_iter` the best iterate is returned inside
/// [`SsrError::NotConverged`].
pub fn smallest_eigenpair_from<F>(apply: F, start: &[f64], opts: &LanczosOptions) -> Result<Eigenpair>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let (pair, converged) = lanczos(apply, start, opts)?;
    if converged {
        Ok(pair)
    } else {
        Err(SsrError::NotConverged {
            iterations: pair.matvecs,
            residual: pair.residual,
            eigenvalue: pair.value,
            eigenvector: pair.vector,
        })
    }
}

/// Best iterate plus a convergence flag; errors only on invalid input or
/// non-finite arithmetic.
pub(crate) fn lanczos<F>(mut apply: F, start: &[f64], opts: &LanczosOptions) -> Result<(Eigenpair, bool)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let dim = start.len();
    if dim == 0 {
        return Err(SsrError::Shape("eigenproblem of dimension 0".into()));
    }
    if start.iter().any(|x| !x.is_finite()) {
        return Err(SsrError::Numeric("start vector contains non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let budget = opts.max_iter.max(1);
    let krylov_dim = opts.krylov_dim.clamp(2, dim.max(2));

    let mut x = start.to_vec();
    let n0 = norm(&x);
    if n0 == 0.0 {
        x = random_unit(dim, &mut rng);
    } else {
        x.iter_mut().for_each(|v| *v /= n0);
    }

    let mut matvecs = 0usize;
    let mut w = vec![0.0; dim];

    if dim == 1 {
        apply(&x, &mut w);
        let value = w[0] / x[0];
        if !value.is_finite() {
            return Err(SsrError::Numeric("non-finite eigenvalue".into()));
        }
        return Ok((
            Eigenpair {
                value,
                vector: x,
                residual: 0.0,
                matvecs: 1,
                start_rayleigh: value,
            },
            true,
        ));
    }

    apply(&x, &mut w);
    matvecs += 1;
    let start_rayleigh = dot(&x, &w);

    loop {
        // Invariant: `w = A x` with `x` unit.
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut scale = 0.0f64;

        let ritz = loop {
            let j = basis.len() - 1;
            let alpha = dot(&basis[j], &w);
            axpy(-alpha, &basis[j], &mut w);
            if j > 0 {
                axpy(-betas[j - 1], &basis[j - 1], &mut w);
            }
            orthogonalize(&mut w, &basis);
            alphas.push(alpha);
            let beta = norm(&w);
            scale = scale.max(alpha.abs() + beta + betas.last().copied().unwrap_or(0.0));

            let (theta, y) = lowest_ritz(&alphas, &betas);
            if !theta.is_finite() {
                return Err(SsrError::Numeric("non-finite Ritz value".into()));
            }
            let full = basis.len() == dim;
            let invariant = beta <= 1e-12 * scale.max(1.0);
            let estimate = beta * y[j].abs();

            if full || (!invariant && estimate <= 0.5 * opts.tol * theta.abs().max(1.0)) {
                break y;
            }
            if matvecs >= budget || basis.len() >= krylov_dim {
                break y;
            }
            if invariant {
                let mut v = random_unit(dim, &mut rng);
                orthogonalize(&mut v, &basis);
                let nv = norm(&v);
                if nv <= 1e-12 {
                    break y;
                }
                v.iter_mut().for_each(|e| *e /= nv);
                betas.push(0.0);
                basis.push(v);
            } else {
                betas.push(beta);
                let v: Vec<f64> = w.iter().map(|e| e / beta).collect();
                basis.push(v);
            }
            apply(basis.last().expect("nonempty"), &mut w);
            matvecs += 1;
        };

        let mut next = vec![0.0; dim];
        for (yi, v) in ritz.iter().zip(&basis) {
            axpy(*yi, v, &mut next);
        }
        let nn = norm(&next);
        next.iter_mut().for_each(|e| *e /= nn);

        apply(&next, &mut w);
        matvecs += 1;
        let value = dot(&next, &w);
        let mut r = w.clone();
        axpy(-value, &next, &mut r);
        let residual = norm(&r);
        if !value.is_finite() || !residual.is_finite() {
            return Err(SsrError::Numeric("non-finite eigenpair".into()));
        }
        x = next;
        let converged = residual <= opts.tol * value.abs().max(1.0);
        if converged || matvecs >= budget {
            let pair = Eigenpair {
                value,
                vector: x,
                residual,
                matvecs,
                start_rayleigh,
            };
            return Ok((pair, converged));
        }
    }
}

fn lowest_ritz(alphas: &[f64], betas: &[f64]) -> (f64, Vec<f64>) {
    let m = alphas.len();
    if m == 1 {
        return (alphas[0], vec![1.0]);
    }
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    let y = eig.eigenvectors.column(idx).iter().copied().collect();
    (theta, y)
}
