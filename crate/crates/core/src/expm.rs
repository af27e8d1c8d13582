//! Symplectic scaling-and-squaring of the block exponential
//!
//! ```text
//! exp([[−Nᵀ, Mᵢ], [0, N]] H) = [[F₂, G₂,ᵢ], [0, F₃]]
//! N  = [[0, I], [−ε⁻¹K, 0]]
//! Mᵢ = [[ε⁻¹∂ᵢK, 0], [0, 0]]
//! ```
//!
//! The base step replaces the Padé seed of ordinary scaling-and-squaring by
//! the velocity-Verlet propagator `(A, Bᵢ, C)` at `h = H/2ⁿ`. `A` and `C` are
//! symplectic with `AᵀC = I`, and `Bᵢ = −J ∂ᵢC` exactly, so every squared
//! triple keeps `F₃ᵀJF₃ = J`, `F₂ᵀF₃ = I`, `G₂,ᵢ = −J ∂ᵢF₃` and the symmetry of
//! `F₃ᵀG₂,ᵢ`; the composed fast flow is symplectic on all variables.

use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{block2, canonical_j};

/// Squaring depth used when the caller has no preference.
pub const DEFAULT_SQUARINGS: u32 = 10;

/// Largest accepted squaring depth for a given stiffness scale:
/// `max(16, ⌈log₂ ε⁻¹⌉ + 4)`.
pub fn max_squarings(epsilon: f64) -> u32 {
    let log = (1.0 / epsilon).log2().ceil().max(0.0) as u32;
    (log + 4).max(16)
}

/// The generators `N` and `Mᵢ` of the block exponential.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGenerator {
    pub n: DMatrix<f64>,
    pub m: Vec<DMatrix<f64>>,
}

impl BlockGenerator {
    pub fn new(k: &DMatrix<f64>, dk: &[DMatrix<f64>], epsilon: f64) -> Result<Self> {
        check_stiffness(k, dk)?;
        let d = k.nrows();
        let inv_eps = 1.0 / epsilon;
        let z = DMatrix::zeros(d, d);
        let n = block2(&z, &DMatrix::identity(d, d), &(-k * inv_eps), &z);
        let m = dk
            .iter()
            .map(|dki| block2(&(dki * inv_eps), &z, &z, &z))
            .collect();
        Ok(BlockGenerator { n, m })
    }

    /// `[[−Nᵀ, Mᵢ], [0, N]]`, the full Van Loan generator for slow index `i`.
    pub fn van_loan(&self, i: usize) -> DMatrix<f64> {
        let z = DMatrix::zeros(self.n.nrows(), self.n.ncols());
        block2(&(-self.n.transpose()), &self.m[i], &z, &self.n)
    }
}

/// Base-step blocks `(A, Bᵢ, C)` at step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerletSeed {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    pub h: f64,
}

/// Blocks `(F₂, {G₂,ᵢ}, F₃)` of the block exponential over the coarse step,
/// with the number of `2d_f×2d_f` matrix products spent producing them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTriple {
    pub f2: DMatrix<f64>,
    pub g2: Vec<DMatrix<f64>>,
    pub f3: DMatrix<f64>,
    pub step: f64,
    pub mult_count: u64,
}

impl ExpTriple {
    /// Unsquared triple built from a seed (`mult_count = 0`).
    pub fn from_seed(seed: VerletSeed) -> Self {
        ExpTriple {
            f2: seed.a,
            g2: seed.b,
            f3: seed.c,
            step: seed.h,
            mult_count: 0,
        }
    }

    pub fn identity(d_fast: usize, d_slow: usize) -> Self {
        let i = DMatrix::identity(2 * d_fast, 2 * d_fast);
        ExpTriple {
            f2: i.clone(),
            g2: vec![DMatrix::zeros(2 * d_fast, 2 * d_fast); d_slow],
            f3: i,
            step: 0.0,
            mult_count: 0,
        }
    }

    /// Half-dimension `d_f` of the fast blocks.
    pub fn d_fast(&self) -> usize {
        self.f3.nrows() / 2
    }

    pub fn d_slow(&self) -> usize {
        self.g2.len()
    }

    /// Kernel `F₃ᵀG₂,ᵢ` of the slow-momentum drift quadratic form.
    pub fn drift_kernel(&self, i: usize) -> DMatrix<f64> {
        self.f3.transpose() * &self.g2[i]
    }
}

fn check_stiffness(k: &DMatrix<f64>, dk: &[DMatrix<f64>]) -> Result<()> {
    if !k.is_square() {
        return Err(dim_err("stiffness matrix must be square"));
    }
    let d = k.nrows();
    if dk.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(dim_err(
            "stiffness derivatives must match the stiffness shape",
        ));
    }
    Ok(())
}

/// Velocity-Verlet seed for step `h`:
///
/// ```text
/// A  = [[I − ε⁻¹K h²/2,        ε⁻¹K h       ], [−h(I − ε⁻¹K h²/4),  I − ε⁻¹K h²/2]]
/// C  = [[I − ε⁻¹K h²/2,  h(I − ε⁻¹K h²/4)   ], [−ε⁻¹K h,            I − ε⁻¹K h²/2]]
/// Bᵢ = [[ε⁻¹∂ᵢK h,        ε⁻¹∂ᵢK h²/2       ], [−ε⁻¹∂ᵢK h²/2,      −ε⁻¹∂ᵢK h³/4  ]]
/// ```
///
/// `h = 0` gives the identity seed.
pub fn verlet_seed(
    k: &DMatrix<f64>,
    dk: &[DMatrix<f64>],
    epsilon: f64,
    h: f64,
) -> Result<VerletSeed> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "base step must be non-negative, got {h}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    check_stiffness(k, dk)?;
    let d = k.nrows();
    let i = DMatrix::<f64>::identity(d, d);
    let ke = k / epsilon;
    let diag = &i - &ke * (h * h / 2.0);
    let quarter = (&i - &ke * (h * h / 4.0)) * h;
    let a = block2(&diag, &(&ke * h), &(-&quarter), &diag);
    let c = block2(&diag, &quarter, &(-&ke * h), &diag);
    let b = dk
        .iter()
        .map(|dki| {
            let m = dki / epsilon;
            block2(
                &(&m * h),
                &(&m * (h * h / 2.0)),
                &(-&m * (h * h / 2.0)),
                &(-&m * (h * h * h / 4.0)),
            )
        })
        .collect();
    Ok(VerletSeed { a, b, c, h })
}

/// One block squaring:
/// `F₂ ← F₂F₂`, `G₂,ᵢ ← F₂G₂,ᵢ + G₂,ᵢF₃`, `F₃ ← F₃F₃`.
///
/// Costs `2 + 2·d_s` matrix products, added to `mult_count`.
pub fn square_triple(t: ExpTriple) -> Result<ExpTriple> {
    let n = t.f3.nrows();
    if t.f2.nrows() != n
        || !t.f2.is_square()
        || !t.f3.is_square()
        || t.g2.iter().any(|g| g.shape() != (n, n))
    {
        return Err(dim_err("exponential triple blocks are not conformable"));
    }
    let g2 =
        t.g2.iter()
            .map(|g| &t.f2 * g + g * &t.f3)
            .collect::<Vec<_>>();
    let products = 2 + 2 * g2.len() as u64;
    Ok(ExpTriple {
        f2: &t.f2 * &t.f2,
        g2,
        f3: &t.f3 * &t.f3,
        step: 2.0 * t.step,
        mult_count: t.mult_count + products,
    })
}

/// Apply [`square_triple`] `n` times.
pub fn square_repeatedly(mut t: ExpTriple, n: u32) -> Result<ExpTriple> {
    for _ in 0..n {
        t = square_triple(t)?;
    }
    Ok(t)
}

/// Exponential triple over `H` from `n` squarings of the Verlet seed at
/// `h = H/2ⁿ`; consumes exactly `2(d_s + 1)n` matrix products.
pub fn symplectic_expm(
    k: &DMatrix<f64>,
    dk: &[DMatrix<f64>],
    epsilon: f64,
    big_h: f64,
    n: u32,
) -> Result<ExpTriple> {
    if n < 1 {
        return Err(Error::InvalidParameter(
            "squaring depth must be at least 1".into(),
        ));
    }
    let limit = max_squarings(epsilon);
    if n > limit {
        return Err(Error::InvalidParameter(format!(
            "squaring depth {n} exceeds {limit} for epsilon = {epsilon:e}"
        )));
    }
    if !(big_h >= 0.0 && big_h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "coarse step must be non-negative, got {big_h}"
        )));
    }
    let h = big_h / 2f64.powi(n as i32);
    let seed = verlet_seed(k, dk, epsilon, h)?;
    square_repeatedly(ExpTriple::from_seed(seed), n)
}

/// Residuals of the structural identities of a triple:
/// `(‖F₃ᵀJF₃ − J‖, ‖F₂ᵀJF₂ − J‖, ‖F₂ᵀF₃ − I‖, maxᵢ‖F₃ᵀG₂,ᵢ − (F₃ᵀG₂,ᵢ)ᵀ‖)`, all max-norm.
pub fn structure_residuals(t: &ExpTriple) -> (f64, f64, f64, f64) {
    use crate::linalg::max_abs;
    let n = t.f3.nrows();
    let j = canonical_j(n / 2);
    let f3 = max_abs(&(t.f3.transpose() * &j * &t.f3 - &j));
    let f2 = max_abs(&(t.f2.transpose() * &j * &t.f2 - &j));
    let rev = max_abs(&(t.f2.transpose() * &t.f3 - DMatrix::identity(n, n)));
    let sym =
        t.g2.iter()
            .map(|g| {
                let s = t.f3.transpose() * g;
                max_abs(&(&s - s.transpose()))
            })
            .fold(0.0, f64::max);
    (f3, f2, rev, sym)
}
