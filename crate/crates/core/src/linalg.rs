//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
///
/// The input is symmetrized before decomposition. Eigenvector columns follow
/// the eigenvalue order; their signs are left as the solver returns them.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Sign of the largest-magnitude entry of `v` (first index wins ties);
/// `1.0` for an empty or zero vector.
pub fn max_abs_sign(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Flip `v` so that its largest-magnitude entry is positive.
pub fn orient_max_abs(v: &mut [f64]) {
    if max_abs_sign(v) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Cholesky factorization that retries once with `1e-12 * trace / n` added to
/// the diagonal.
pub fn cholesky_jitter(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = a.clone().cholesky() {
        return Ok(c);
    }
    let n = a.nrows().max(1);
    let jitter = 1e-12 * a.trace().abs() / n as f64;
    let mut b = a.clone();
    for i in 0..a.nrows() {
        b[(i, i)] += jitter;
    }
    b.cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Order-`q` difference matrix of shape `(k - q) x k`.
pub fn difference_matrix(k: usize, q: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..q.min(k) {
        let r = d.nrows();
        if r < 2 {
            return DMatrix::zeros(0, k);
        }
        let mut next = DMatrix::zeros(r - 1, k);
        for i in 0..r - 1 {
            for j in 0..k {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    d
}

/// `D_qᵀ D_q` for the order-`q` difference matrix.
pub fn difference_penalty(k: usize, q: usize) -> DMatrix<f64> {
    let d = difference_matrix(k, q);
    d.transpose() * d
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Row-major Kronecker product of two vectors: index `a * len(y) + b`.
pub fn kron_vec(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len() * y.len());
    for (a, xa) in x.iter().enumerate() {
        for (b, yb) in y.iter().enumerate() {
            out[a * y.len() + b] = xa * yb;
        }
    }
    out
}

/// Kronecker product of two matrices.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `diag(s) · A · diag(s)`.
pub fn scale_rows_cols(a: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(n, a.ncols(), |i, j| s[i] * a[(i, j)] * s[j])
}

/// Linear-interpolated sample quantile (type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // degree 8 is exact for 5 nodes
        let i8: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((i8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn second_differences_annihilate_linear() {
        let d = difference_matrix(6, 2);
        assert_eq!(d.shape(), (4, 6));
        let lin = DVector::from_fn(6, |i, _| 3.0 + 2.0 * i as f64);
        assert!((d * lin).norm() < 1e-12);
    }

    #[test]
    fn eigen_sorted_descending() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&a);
        assert_eq!(vals, vec![5.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_matches_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.025) - 1.075).abs() < 1e-12);
    }
}
