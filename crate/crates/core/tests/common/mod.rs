#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Composite Simpson rule on `[a, b]` with an even number of panels.
pub fn simpson<F>(f: F, a: f64, b: f64, panels: usize) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    assert!(panels.is_multiple_of(2));
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + k as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(r: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    let q = g.qr().q();
    let eig = DVector::from_fn(d, |_, _| r.random_range(lo..hi));
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

pub fn random_symmetric(r: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| r.random_range(-scale..scale));
    (&g + g.transpose()) * 0.5
}

pub fn j(d: usize) -> DMatrix<f64> {
    multiscale_core::linalg::canonical_j(d)
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
