//! Exponentials updated from the previous coarse step, and derivatives of
//! the drift block `G₂` with respect to the slow variables.
//!
//! When `K(q_slow)` changes slowly, `exp(X_new)` is approximated by
//! `[exp(X_prev/2ⁿ) exp((X_new − X_prev)/2ⁿ)]^(2ⁿ)`. For the block generators
//! of this crate the increment is nilpotent, so the inner factor is exact and
//! symplectic:
//!
//! ```text
//! D  = [[0, ε⁻¹ΔK h], [0, 0]]     Eᵢ = [[ε⁻¹Δ∂ᵢK h, 0], [0, 0]]
//! A ← A + AD    Bᵢ ← Bᵢ + AEᵢ − BᵢDᵀ    C ← C − CDᵀ
//! ```

use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::expm::{square_repeatedly, verlet_seed, BlockGenerator, ExpTriple};
use crate::linalg::{block, block2, canonical_j, expm_series, log_norm, max_abs, norm2};
use crate::oracles::van_loan_diagonalization;

/// How the base-step triple at `h = H/2ⁿ` is produced on the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeedBackend {
    /// Velocity-Verlet blocks (symplectic, `O(h³)` local error).
    #[default]
    Verlet,
    /// Exact blocks by diagonalizing `K`.
    Diagonalization,
    /// Padé exponential of the full block generator.
    Pade,
}

/// Running base-step blocks and the stiffness they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    pub k_prev: DMatrix<f64>,
    pub dk_prev: Vec<DMatrix<f64>>,
    pub h: f64,
    pub epsilon: f64,
}

/// Nilpotent increments between two consecutive stiffness evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct IterUpdate {
    pub d: DMatrix<f64>,
    pub e: Vec<DMatrix<f64>>,
}

impl IterUpdate {
    pub fn new(state: &IterState, k_new: &DMatrix<f64>, dk_new: &[DMatrix<f64>]) -> Result<Self> {
        let df = state.k_prev.nrows();
        if k_new.shape() != (df, df)
            || dk_new.len() != state.dk_prev.len()
            || dk_new.iter().any(|m| m.shape() != (df, df))
        {
            return Err(dim_err("new stiffness does not match the iteration state"));
        }
        let s = state.h / state.epsilon;
        let z = DMatrix::zeros(df, df);
        let d = block2(&z, &((k_new - &state.k_prev).transpose() * s), &z, &z);
        let e = dk_new
            .iter()
            .zip(&state.dk_prev)
            .map(|(new, old)| block2(&((new - old) * s), &z, &z, &z))
            .collect();
        Ok(IterUpdate { d, e })
    }
}

/// `[exp(X_prev/2ⁿ) · exp((X_new − X_prev)/2ⁿ)]^(2ⁿ)` given `exp(X_prev/2ⁿ)`.
///
/// The inner factor is `I + B` when `B = (X_new − X_prev)/2ⁿ` squares to zero,
/// and a Taylor series otherwise.
pub fn lie_trotter_exp(
    x_prev_exp: &DMatrix<f64>,
    x_prev: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
    n: u32,
) -> Result<DMatrix<f64>> {
    let d = x_prev.nrows();
    if !x_prev.is_square() || x_new.shape() != (d, d) || x_prev_exp.shape() != (d, d) {
        return Err(dim_err(
            "Lie-Trotter operands must be square and of equal size",
        ));
    }
    let b = (x_new - x_prev) / 2f64.powi(n as i32);
    let inner = if max_abs(&(&b * &b)) == 0.0 {
        DMatrix::identity(d, d) + &b
    } else {
        expm_series(&b)
    };
    Ok(crate::linalg::power_of_two(&(x_prev_exp * inner), n))
}

/// Right-hand side `2^(−n−1) e^max(μ(A+B), μ(A)+μ(B)) ‖[A,B]‖₂` of the
/// Lie-Trotter error bound.
pub fn lie_trotter_bound(a: &DMatrix<f64>, b: &DMatrix<f64>, n: u32) -> f64 {
    let mu = log_norm(&(a + b)).max(log_norm(a) + log_norm(b));
    let comm = norm2(&(a * b - b * a));
    if comm == 0.0 {
        return 0.0;
    }
    2f64.powi(-(n as i32) - 1) * mu.exp() * comm
}

fn pade_triple(k: &DMatrix<f64>, dk: &[DMatrix<f64>], epsilon: f64, t: f64) -> Result<ExpTriple> {
    let gen = BlockGenerator::new(k, dk, epsilon)?;
    let f3 = (&gen.n * t).exp();
    let f2 = (-gen.n.transpose() * t).exp();
    let g2 = (0..dk.len())
        .map(|i| block(&(gen.van_loan(i) * t).exp(), 0, 1, gen.n.nrows()))
        .collect();
    Ok(ExpTriple {
        f2,
        g2,
        f3,
        step: t,
        mult_count: 0,
    })
}

/// Base-step state at `h = H/2ⁿ` for stiffness `K0`.
pub fn iter_init(
    k0: &DMatrix<f64>,
    dk0: &[DMatrix<f64>],
    epsilon: f64,
    big_h: f64,
    n: u32,
    backend: SeedBackend,
) -> Result<IterState> {
    if !(big_h >= 0.0 && big_h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "coarse step must be non-negative, got {big_h}"
        )));
    }
    let h = big_h / 2f64.powi(n as i32);
    let (a, b, c) = match backend {
        SeedBackend::Verlet => {
            let s = verlet_seed(k0, dk0, epsilon, h)?;
            (s.a, s.b, s.c)
        }
        SeedBackend::Diagonalization => {
            let t = van_loan_diagonalization(k0, dk0, epsilon, h)?;
            (t.f2, t.g2, t.f3)
        }
        SeedBackend::Pade => {
            let t = pade_triple(k0, dk0, epsilon, h)?;
            (t.f2, t.g2, t.f3)
        }
    };
    Ok(IterState {
        a,
        b,
        c,
        k_prev: k0.clone(),
        dk_prev: dk0.to_vec(),
        h,
        epsilon,
    })
}

/// Advance the base blocks to the new stiffness and square `n` times.
pub fn iter_update(
    state: IterState,
    k_new: &DMatrix<f64>,
    dk_new: &[DMatrix<f64>],
    n: u32,
) -> Result<(IterState, ExpTriple)> {
    let up = IterUpdate::new(&state, k_new, dk_new)?;
    let dt = up.d.transpose();
    let b = state
        .b
        .iter()
        .zip(&up.e)
        .map(|(bi, ei)| bi + &state.a * ei - bi * &dt)
        .collect::<Vec<_>>();
    let a = &state.a + &state.a * &up.d;
    let c = &state.c - &state.c * &dt;
    let next = IterState {
        a,
        b,
        c,
        k_prev: k_new.clone(),
        dk_prev: dk_new.to_vec(),
        h: state.h,
        epsilon: state.epsilon,
    };
    let seed = ExpTriple {
        f2: next.a.clone(),
        g2: next.b.clone(),
        f3: next.c.clone(),
        step: next.h,
        mult_count: 0,
    };
    let triple = square_repeatedly(seed, n)?;
    Ok((next, triple))
}

/// How [`triple_block_exp`] exponentiates the stacked matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockExpBackend {
    /// Padé scaling and squaring.
    #[default]
    Pade,
    /// Truncated Taylor series with scaling and squaring.
    Series,
}

/// Blocks of
///
/// ```text
/// exp([[−Nᵀ, MJ, 0], [0, −Nᵀ, M], [0, 0, N]] t) = [[α, β, γ], [0, F₂, G₂], [0, 0, F₃]]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct TripleBlockResult {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub f2: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub f3: DMatrix<f64>,
}

fn exp_with(x: &DMatrix<f64>, backend: BlockExpBackend) -> DMatrix<f64> {
    match backend {
        BlockExpBackend::Pade => x.clone().exp(),
        BlockExpBackend::Series => expm_series(x),
    }
}

/// See [`TripleBlockResult`]. `m_top` takes the place of `M` in the `MJ`
/// slot, which gives the mixed integrals needed for `∂ⱼG₂,ᵢ` with `i ≠ j`.
pub fn triple_block_exp_mixed(
    n: &DMatrix<f64>,
    m_top: &DMatrix<f64>,
    m: &DMatrix<f64>,
    t: f64,
    backend: BlockExpBackend,
) -> Result<TripleBlockResult> {
    let d = n.nrows();
    if !n.is_square() || !d.is_multiple_of(2) || m.shape() != (d, d) || m_top.shape() != (d, d) {
        return Err(dim_err(
            "triple block exponential needs square, even, equal-size N and M",
        ));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time must be non-negative, got {t}"
        )));
    }
    let j = canonical_j(d / 2);
    let mut z = DMatrix::zeros(3 * d, 3 * d);
    let nt = -n.transpose();
    z.view_mut((0, 0), (d, d)).copy_from(&nt);
    z.view_mut((0, d), (d, d)).copy_from(&(m_top * &j));
    z.view_mut((d, d), (d, d)).copy_from(&nt);
    z.view_mut((d, 2 * d), (d, d)).copy_from(m);
    z.view_mut((2 * d, 2 * d), (d, d)).copy_from(n);
    let e = exp_with(&(z * t), backend);
    if !crate::linalg::all_finite(&e) {
        return Err(Error::NonFinite("triple block exponential"));
    }
    let b = |r: usize, c: usize| block(&e, r, c, d);
    Ok(TripleBlockResult {
        alpha: b(0, 0),
        beta: b(0, 1),
        gamma: b(0, 2),
        f2: b(1, 1),
        g2: b(1, 2),
        f3: b(2, 2),
    })
}

pub fn triple_block_exp(
    n: &DMatrix<f64>,
    m: &DMatrix<f64>,
    t: f64,
    backend: BlockExpBackend,
) -> Result<TripleBlockResult> {
    triple_block_exp_mixed(n, m, m, t, backend)
}

/// `∫₀ᵗ F₃(s)ᵀ P F₃(s) ds`, read off `exp([[−Nᵀ, P], [0, N]] t)` as `F₃ᵀG₂`.
pub fn sandwich_integral(
    n: &DMatrix<f64>,
    p: &DMatrix<f64>,
    t: f64,
    backend: BlockExpBackend,
) -> Result<DMatrix<f64>> {
    let d = n.nrows();
    let z = DMatrix::zeros(d, d);
    let e = exp_with(&(block2(&(-n.transpose()), p, &z, n) * t), backend);
    Ok(block(&e, 1, 1, d).transpose() * block(&e, 0, 1, d))
}

/// `∂ⱼG₂,ᵢ(t)` where `Mᵢ` generates `G₂,ᵢ`, `Mⱼ` generates `G₂,ⱼ = −J∂ⱼF₃`,
/// and `dm = ∂ⱼMᵢ`:
///
/// ```text
/// ∂ⱼG₂,ᵢ = F₂ ( (F₃ᵀγ)ᵀ + F₃ᵀγ + ∫F₃ᵀ ∂ⱼMᵢ F₃ − (JG₂,ⱼ)ᵀ G₂,ᵢ )
/// ```
///
/// with `γ` from the triple exponential with `Mᵢ` in the top slot and `Mⱼ`
/// in the middle.
pub fn partial_g2_mixed(
    n: &DMatrix<f64>,
    m_i: &DMatrix<f64>,
    m_j: &DMatrix<f64>,
    dm: &DMatrix<f64>,
    t: f64,
    backend: BlockExpBackend,
) -> Result<DMatrix<f64>> {
    let d = n.nrows();
    if dm.shape() != (d, d) {
        return Err(dim_err("derivative generator has the wrong shape"));
    }
    let tri = triple_block_exp_mixed(n, m_i, m_j, t, backend)?;
    let g2_i = if m_i == m_j {
        tri.g2.clone()
    } else {
        triple_block_exp(n, m_i, t, backend)?.g2
    };
    Ok(&tri.f2 * bracket(n, &tri, &g2_i, dm, t, backend)?)
}

fn bracket(
    n: &DMatrix<f64>,
    tri: &TripleBlockResult,
    g2_i: &DMatrix<f64>,
    dm: &DMatrix<f64>,
    t: f64,
    backend: BlockExpBackend,
) -> Result<DMatrix<f64>> {
    let j = canonical_j(n.nrows() / 2);
    let fg = tri.f3.transpose() * &tri.gamma;
    let dfj = &j * &tri.g2;
    Ok(fg.transpose() + &fg + sandwich_integral(n, dm, t, backend)? - dfj.transpose() * g2_i)
}

/// `∂G₂(t)` for a single parameter: `M` generates `G₂` and `dm = ∂M`.
pub fn partial_g2(
    n: &DMatrix<f64>,
    m: &DMatrix<f64>,
    dm: &DMatrix<f64>,
    t: f64,
    backend: BlockExpBackend,
) -> Result<DMatrix<f64>> {
    partial_g2_mixed(n, m, m, dm, t, backend)
}

/// The symmetric part `(F₃ᵀγ)ᵀ + F₃ᵀγ + ∫F₃ᵀ∂M F₃` of the `∂G₂` bracket.
pub fn partial_g2_symmetric_part(
    n: &DMatrix<f64>,
    m: &DMatrix<f64>,
    dm: &DMatrix<f64>,
    t: f64,
    backend: BlockExpBackend,
) -> Result<DMatrix<f64>> {
    let tri = triple_block_exp(n, m, t, backend)?;
    let fg = tri.f3.transpose() * &tri.gamma;
    Ok(fg.transpose() + &fg + sandwich_integral(n, dm, t, backend)?)
}

/// Jacobian `∂q_slow((k+1)′)/∂q_slow(k′)` of one composed step with the fast
/// state `x = [q_fast; p_fast]` and the momenta at `k′` held fixed:
///
/// ```text
/// δᵢⱼ − (H/2) xᵀ ( (∂ⱼF₃)ᵀ G₂,ᵢ + F₃ᵀ ∂ⱼG₂,ᵢ ) x,   ∂ⱼF₃ = J G₂,ⱼ
/// ```
///
/// `d2k[i][j]` is `∂ᵢ∂ⱼK` at the current slow position.
pub fn slow_position_jacobian(
    k: &DMatrix<f64>,
    dk: &[DMatrix<f64>],
    d2k: &[Vec<DMatrix<f64>>],
    epsilon: f64,
    big_h: f64,
    x: &nalgebra::DVector<f64>,
    backend: BlockExpBackend,
) -> Result<DMatrix<f64>> {
    let ds = dk.len();
    if d2k.len() != ds || d2k.iter().any(|r| r.len() != ds) {
        return Err(dim_err("second derivatives of K must be d_s × d_s"));
    }
    let gen = BlockGenerator::new(k, dk, epsilon)?;
    if x.len() != gen.n.nrows() {
        return Err(dim_err("fast state has the wrong length"));
    }
    let z = DMatrix::zeros(k.nrows(), k.nrows());
    let j = canonical_j(k.nrows());
    let tris = gen
        .m
        .iter()
        .map(|m| triple_block_exp(&gen.n, m, big_h, backend))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::identity(ds, ds);
    for i in 0..ds {
        for jj in 0..ds {
            let dm = block2(&(&d2k[i][jj] / epsilon), &z, &z, &z);
            let dg = partial_g2_mixed(&gen.n, &gen.m[i], &gen.m[jj], &dm, big_h, backend)?;
            let df3 = &j * &tris[jj].g2;
            let kernel = df3.transpose() * &tris[i].g2 + tris[i].f3.transpose() * dg;
            out[(i, jj)] -= 0.5 * big_h * x.dot(&(kernel * x));
        }
    }
    Ok(out)
}
