//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Smallest admissible Cholesky pivot (`L_kk²`) for a matrix to count as SPD.
pub const SPD_PIVOT_TOL: f64 = 1e-12;

/// Cholesky factorization that rejects pivots at or below [`SPD_PIVOT_TOL`].
pub fn spd_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let ok = (0..m.nrows()).all(|k| {
        let pivot = l[(k, k)] * l[(k, k)];
        pivot.is_finite() && pivot > SPD_PIVOT_TOL
    });
    ok.then_some(chol)
}

/// Copy the lower triangle onto the upper one.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `(τ_min, τ_max)` of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Symmetric square root of an SPD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&v| v < 0.0) {
        return None;
    }
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let mut out = &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Some(out)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
///
/// Returns `None` when the Rayleigh quotient has not settled to `tol`
/// (relative) within `max_iter` iterations.
pub fn power_iteration(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> Option<f64> {
    let n = m.nrows();
    if n == 0 {
        return Some(0.0);
    }
    // A deterministic, non-axis-aligned start vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sin());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Some(0.0);
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= tol * next.abs().max(1.0) {
            return Some(next);
        }
        estimate = next;
    }
    None
}
