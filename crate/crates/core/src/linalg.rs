//! Small dense linear-algebra kernels (row-major, square or tall matrices of
//! a few dozen rows at most).

use crate::Scalar;

/// Cholesky factor `L` (lower, row-major) of a symmetric positive-definite
/// `n × n` matrix. Returns `None` when a pivot falls below `tol · max diag`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn cholesky<T: Scalar>(a: &[T], n: usize, tol: T) -> Option<Vec<T>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(T::zero(), T::max);
    let floor = tol * scale.max(T::min_positive_value());
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > floor) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given a Cholesky factor.
pub fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as columns
/// of a row-major `n × n` matrix.
pub fn symmetric_eigen<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let two = T::of(2.0);
    let total: T = m.iter().map(|x| *x * *x).sum();
    let eps = T::epsilon() * T::epsilon() * total.max(T::min_positive_value());
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= eps {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    (values, v)
}

/// `a (n×k) · b (k×m)`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for j in 0..m {
                out[i * m + j] += aip * b[p * m + j];
            }
        }
    }
    out
}

/// Square root of a symmetric PSD matrix via its eigen-decomposition, with
/// eigenvalues in `[-neg_tol, 0)` clamped to zero. Returns `None` when an
/// eigenvalue is below `-neg_tol`.
pub fn psd_sqrt<T: Scalar>(a: &[T], n: usize, neg_tol: T) -> Option<Vec<T>> {
    let (vals, vecs) = symmetric_eigen(a, n);
    let mut out = vec![T::zero(); n * n];
    for (k, &lam) in vals.iter().enumerate() {
        if lam < -neg_tol {
            return None;
        }
        let s = lam.max(T::zero()).sqrt();
        for i in 0..n {
            let vik = vecs[i * n + k] * s;
            for j in 0..n {
                out[i * n + j] += vik * vecs[j * n + k];
            }
        }
    }
    Some(out)
}
