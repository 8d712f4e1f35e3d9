//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Solve `a x = b` for symmetric positive (semi)definite `a`.
///
/// Tries a plain Cholesky first and falls back to a ridge of `ridge_rel * trace / dim`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge_rel: f64) -> Option<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let n = a.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, b.ncols()));
    }
    let shift = ridge_rel * a.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut r = a.clone();
    for i in 0..n {
        r[(i, i)] += shift;
    }
    r.cholesky().map(|ch| ch.solve(b))
}

/// Inverse of a symmetric positive definite matrix, `None` if not PD.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|ch| ch.inverse())
}

/// General square inverse via LU.
pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().try_inverse()
}

/// 2-norm condition number from singular values; `inf` when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `a + rel * trace(a) * I`.
pub fn add_trace_jitter(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let shift = rel * a.trace().abs();
    let mut out = a.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += shift;
    }
    out
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    symmetrize(a).symmetric_eigenvalues().min()
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    symmetrize(a).symmetric_eigenvalues().max()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_max_eigenvalue(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-10 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    est
}

/// Quadratic form `xᵀ A⁻¹ x` for symmetric PD `A`.
pub fn inverse_quadratic_form(a: &DMatrix<f64>, x: &DVector<f64>) -> Option<f64> {
    let ch = a.clone().cholesky()?;
    let y = ch.solve(x);
    Some(x.dot(&y))
}

/// Copy the rows listed in `idx` into a new matrix.
pub fn select_rows(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), a.ncols(), |i, j| a[(idx[i], j)])
}

pub fn select_rows_vec(a: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| a[idx[i]])
}
