//! Minimum-norm least squares and symmetric pseudo-inversion with a
//! relative cutoff.

use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};

/// Result of a min-norm solve.
#[derive(Clone, Debug)]
pub struct MinNormSolve<T: Real> {
    pub x: DVector<T>,
    pub rank: usize,
    /// Absolute threshold below which singular values were discarded.
    pub threshold: T,
}

/// One-sided Jacobi SVD. Returns `(w, v)` where the columns of `w` are
/// mutually orthogonal with norms equal to the singular values and
/// `a = w * v^T`.
fn jacobi_svd<T: Real>(mut w: DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = w.ncols();
    let mut v = DMatrix::identity(n, n);
    let eps = T::default_epsilon();
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let t = if zeta == T::zero() { T::one() } else { t };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.nrows() {
                        let (xp, xq) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * xp - s * xq;
                        m[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// `argmin ||x||` over the minimizers of `||A x - b||`. Tall systems are
/// first reduced by Householder QR; the square factor is decomposed by
/// one-sided Jacobi, which stays accurate on the sparse, block-structured
/// designs the policy updates produce. Singular values at or below
/// `rel_cutoff * sigma_max` are treated as zero.
pub fn lstsq_min_norm<T: Real>(a: &DMatrix<T>, b: &DVector<T>, rel_cutoff: T) -> MinNormSolve<T> {
    let (m, n) = a.shape();
    assert_eq!(m, b.len(), "row count differs from target length");
    if m == 0 || n == 0 {
        return MinNormSolve {
            x: DVector::zeros(n),
            rank: 0,
            threshold: T::zero(),
        };
    }
    let (core, rhs) = if m > n {
        let qr = a.clone().qr();
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        (qr.r(), qtb.rows(0, n).into_owned())
    } else {
        (a.clone(), b.clone())
    };
    let (w, v) = jacobi_svd(core);
    let sigma: Vec<T> = (0..n).map(|j| w.column(j).norm()).collect();
    let sigma_max = sigma.iter().copied().fold(T::zero(), |acc, s| acc.max(s));
    let threshold = rel_cutoff * sigma_max;
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    for (j, &s) in sigma.iter().enumerate() {
        if s <= threshold || s == T::zero() {
            continue;
        }
        rank += 1;
        // w_j = s u_j, so u_j . rhs / s = w_j . rhs / s^2
        let coef = w.column(j).dot(&rhs) / (s * s);
        x.axpy(coef, &v.column(j), T::one());
    }
    MinNormSolve { x, rank, threshold }
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix via its eigen
/// decomposition. Eigenvalues with magnitude at or below
/// `rel_cutoff * max|lambda|` are dropped.
pub fn pinv_symmetric<T: Real>(m: &DMatrix<T>, rel_cutoff: T) -> (DMatrix<T>, usize) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let eig = m.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(T::zero(), |acc, l| acc.max(l.abs()));
    let threshold = rel_cutoff * lambda_max;
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() <= threshold || l == T::zero() {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(i);
        out.ger(T::one() / l, &v, &v, T::one());
    }
    (out, rank)
}

/// Scale each row of `a` and entry of `b` by `sqrt(w)`, turning a weighted
/// least-squares problem into an ordinary one.
pub fn apply_row_weights<T: Real>(a: &mut DMatrix<T>, b: &mut DVector<T>, weights: &[T]) {
    for (i, &w) in weights.iter().enumerate() {
        let r = w.sqrt();
        a.row_mut(i).scale_mut(r);
        b[i] *= r;
    }
}
