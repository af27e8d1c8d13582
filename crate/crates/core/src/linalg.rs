//! Small dense-matrix helpers shared by the exponentiation backends.

use nalgebra::{DMatrix, DVector};

/// `[[a, b], [c, d]]` assembled from four equally sized square blocks.
pub fn block2(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, n)).copy_from(b);
    m.view_mut((n, 0), (n, n)).copy_from(c);
    m.view_mut((n, n), (n, n)).copy_from(d);
    m
}

/// Block `(row, col)` of size `size×size`.
pub fn block(m: &DMatrix<f64>, row: usize, col: usize, size: usize) -> DMatrix<f64> {
    m.view((row * size, col * size), (size, size)).into_owned()
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        m.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    m
}

/// Canonical `J = [[0, I], [−I, 0]]` of size `2d×2d`.
pub fn canonical_j(d: usize) -> DMatrix<f64> {
    let i = DMatrix::identity(d, d);
    let z = DMatrix::zeros(d, d);
    block2(&z, &i, &(-&i), &z)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Max-norm `‖m‖_∞` over entries.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Largest eigenvalue of the Hermitian part `(Xᵀ + X)/2` (logarithmic 2-norm).
pub fn log_norm(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Raise to the power `2^squarings` by repeated squaring.
pub fn power_of_two(m: &DMatrix<f64>, squarings: u32) -> DMatrix<f64> {
    let mut out = m.clone();
    for _ in 0..squarings {
        out = &out * &out;
    }
    out
}

/// Truncated Taylor exponential with scaling and squaring, accurate to
/// roundoff for moderate norms.
pub fn expm_series(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.iter().map(|x| x.abs()).sum::<f64>().max(0.0);
    let mut s = 0u32;
    while norm / 2f64.powi(s as i32) > 0.5 {
        s += 1;
    }
    let scaled = m / 2f64.powi(s as i32);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=24 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if max_abs(&term) <= f64::EPSILON * max_abs(&sum) * 1e-2 {
            break;
        }
    }
    power_of_two(&sum, s)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
