//! Ground-truth flows and exponentials: diagonalization, first-order Taylor
//! scaling-and-squaring, the closed-form one-dimensional fast flow, and
//! micro-step velocity Verlet.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_err, Error, Result};
use crate::expm::{square_repeatedly, BlockGenerator, ExpTriple};
use crate::linalg::{block2, power_of_two};
use crate::phase::{PhaseState, QuasiQuadraticSystem};

/// `ε⁻¹K = Qᵀ diag(ω²) Q` with `Q` orthogonal (rows are eigenvectors).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalizedStiffness {
    pub q: DMatrix<f64>,
    pub omegas: DVector<f64>,
}

impl DiagonalizedStiffness {
    pub fn new(k: &DMatrix<f64>, epsilon: f64) -> Result<Self> {
        if !k.is_square() {
            return Err(dim_err("stiffness matrix must be square"));
        }
        let eig = SymmetricEigen::new(crate::linalg::symmetrize(k));
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if k.nrows() > 0 && !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(min));
        }
        Ok(DiagonalizedStiffness {
            q: eig.eigenvectors.transpose(),
            omegas: eig.eigenvalues.map(|l| (l / epsilon).sqrt()),
        })
    }

    fn modal(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.omegas.map(f))
    }

    /// `Qᵀ diag Q`.
    fn conjugate(&self, diag: &DMatrix<f64>) -> DMatrix<f64> {
        self.q.transpose() * diag * &self.q
    }

    /// Fast flow `exp(N t)`.
    pub fn flow(&self, t: f64) -> DMatrix<f64> {
        let c = self.conjugate(&self.modal(|w| (w * t).cos()));
        let sw = self.conjugate(&self.modal(|w| (w * t).sin() / w));
        let ws = self.conjugate(&self.modal(|w| w * (w * t).sin()));
        block2(&c, &sw, &(-ws), &c)
    }

    /// Adjoint flow `exp(−Nᵀ t) = exp(N t)⁻ᵀ`.
    pub fn adjoint_flow(&self, t: f64) -> DMatrix<f64> {
        let c = self.conjugate(&self.modal(|w| (w * t).cos()));
        let sw = self.conjugate(&self.modal(|w| (w * t).sin() / w));
        let ws = self.conjugate(&self.modal(|w| w * (w * t).sin()));
        block2(&c, &ws, &(-sw), &c)
    }

    /// `∫₀ᵗ exp(Nᵀs) M exp(Ns) ds` for `M = [[m, 0], [0, 0]]`, in closed form.
    ///
    /// In modal coordinates the integrand couples every pair of frequencies
    /// `(ωⱼ, ωₗ)`; each entry reduces to integrals of products of sines and
    /// cosines, evaluated with removable singularities at `ωⱼ = ωₗ` handled.
    pub fn drift_kernel(&self, m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let d = self.omegas.len();
        let mm = &self.q * m * self.q.transpose();
        let mut cc = DMatrix::zeros(d, d);
        let mut cs = DMatrix::zeros(d, d);
        let mut sc = DMatrix::zeros(d, d);
        let mut ss = DMatrix::zeros(d, d);
        for j in 0..d {
            for l in 0..d {
                let (a, b) = (self.omegas[j], self.omegas[l]);
                let i_cc = 0.5 * (sin_integral(a - b, t) + sin_integral(a + b, t));
                let i_ss = 0.5 * (sin_integral(a - b, t) - sin_integral(a + b, t));
                let i_cs = 0.5 * (cos_integral(a + b, t) + cos_integral(b - a, t));
                let i_sc = 0.5 * (cos_integral(a + b, t) + cos_integral(a - b, t));
                let w = mm[(j, l)];
                cc[(j, l)] = w * i_cc;
                cs[(j, l)] = w * i_cs / b;
                sc[(j, l)] = w * i_sc / a;
                ss[(j, l)] = w * i_ss / (a * b);
            }
        }
        let qt = self.q.transpose();
        let back = |x: &DMatrix<f64>| &qt * x * &self.q;
        block2(&back(&cc), &back(&cs), &back(&sc), &back(&ss))
    }
}

/// `∫₀ᵗ cos(d s) ds = sin(d t)/d`, continuous through `d = 0`.
fn sin_integral(d: f64, t: f64) -> f64 {
    let x = d * t;
    if x.abs() < 1e-4 {
        t * (1.0 - x * x / 6.0)
    } else {
        x.sin() / d
    }
}

/// `∫₀ᵗ sin(d s) ds = (1 − cos(d t))/d`, continuous through `d = 0`.
fn cos_integral(d: f64, t: f64) -> f64 {
    let x = d * t;
    if x.abs() < 1e-4 {
        t * (x / 2.0 - x * x * x / 24.0)
    } else {
        2.0 * (x / 2.0).sin().powi(2) / d
    }
}

/// Exact fast flow `exp([[0, H·I], [−ε⁻¹HK, 0]])` by diagonalization of `K`.
pub fn expm_diagonalization(k: &DMatrix<f64>, epsilon: f64, big_h: f64) -> Result<DMatrix<f64>> {
    Ok(DiagonalizedStiffness::new(k, epsilon)?.flow(big_h))
}

/// The full triple `(F₂, G₂,ᵢ, F₃)` by diagonalization: `F₃ = exp(NH)`,
/// `F₂ = exp(−NᵀH)`, and `G₂,ᵢ = F₂ Sᵢ` with `Sᵢ` the closed-form drift kernel.
pub fn van_loan_diagonalization(
    k: &DMatrix<f64>,
    dk: &[DMatrix<f64>],
    epsilon: f64,
    big_h: f64,
) -> Result<ExpTriple> {
    let diag = DiagonalizedStiffness::new(k, epsilon)?;
    if dk.iter().any(|m| m.shape() != k.shape()) {
        return Err(dim_err(
            "stiffness derivatives must match the stiffness shape",
        ));
    }
    let f2 = diag.adjoint_flow(big_h);
    let f3 = diag.flow(big_h);
    let g2 = dk
        .iter()
        .map(|m| &f2 * diag.drift_kernel(&(m / epsilon), big_h))
        .collect();
    Ok(ExpTriple {
        f2,
        g2,
        f3,
        step: big_h,
        mult_count: 0,
    })
}

/// `[I + X/2ⁿ]^(2ⁿ)`: first-order Taylor (Padé (1,0)) scaling and squaring.
/// Not symplectic for Hamiltonian `X`.
pub fn expm_taylor_squaring(x: &DMatrix<f64>, n: u32) -> DMatrix<f64> {
    let d = x.nrows();
    let seed = DMatrix::identity(d, d) + x / 2f64.powi(n as i32);
    power_of_two(&seed, n)
}

/// Triple from first-order Taylor seeds of the block generator,
/// `(I − Nᵀh, Mᵢh, I + Nh)`, squared `n` times. Equal to the blocks of
/// [`expm_taylor_squaring`] applied to `[[−Nᵀ, Mᵢ], [0, N]]H`.
pub fn taylor_triple(
    k: &DMatrix<f64>,
    dk: &[DMatrix<f64>],
    epsilon: f64,
    big_h: f64,
    n: u32,
) -> Result<ExpTriple> {
    let gen = BlockGenerator::new(k, dk, epsilon)?;
    let h = big_h / 2f64.powi(n as i32);
    let d2 = gen.n.nrows();
    let i = DMatrix::<f64>::identity(d2, d2);
    let seed = ExpTriple {
        f2: &i - gen.n.transpose() * h,
        g2: gen.m.iter().map(|m| m * h).collect(),
        f3: &i + &gen.n * h,
        step: h,
        mult_count: 0,
    };
    square_repeatedly(seed, n)
}

/// Exact flow of the frozen-slow fast subsystem for `d_f = 1`, with
/// `ω = √(ε⁻¹K)`:
///
/// ```text
/// q  ↦ cos(ωH) q + sin(ωH)/ω p
/// p  ↦ −ω sin(ωH) q + cos(ωH) p
/// pᵢ ↦ pᵢ − ε⁻¹ ½ ∂ᵢK /(4ω³) · ( 2ω(Hp² + pq + ω²Hq²) − 2ωpq cos(2ωH) + (ω²q² − p²) sin(2ωH) )
/// ```
pub fn analytic_flow_1d(
    state: &PhaseState,
    k: f64,
    dk: &[f64],
    epsilon: f64,
    big_h: f64,
) -> Result<PhaseState> {
    if state.d_fast() != 1 {
        return Err(dim_err(format!(
            "closed-form flow needs one fast dimension, got {}",
            state.d_fast()
        )));
    }
    if dk.len() != state.d_slow() {
        return Err(dim_err(
            "stiffness gradient length differs from the slow dimension",
        ));
    }
    if !(k > 0.0) {
        return Err(Error::NotPositiveDefinite(k));
    }
    let w = (k / epsilon).sqrt();
    let (q, p) = (state.q_fast[0], state.p_fast[0]);
    let (s, c) = (w * big_h).sin_cos();
    let (s2, c2) = (2.0 * w * big_h).sin_cos();
    let integral = (2.0 * w * (big_h * p * p + p * q + w * w * big_h * q * q)
        - 2.0 * w * p * q * c2
        + (w * w * q * q - p * p) * s2)
        / (4.0 * w * w * w);
    let mut out = state.clone();
    out.q_fast[0] = c * q + s / w * p;
    out.p_fast[0] = -w * s * q + c * p;
    for (i, dki) in dk.iter().enumerate() {
        out.p_slow[i] -= 0.5 / epsilon * dki * integral;
    }
    Ok(out)
}

/// What the micro-step Verlet reference integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerletMode {
    /// Only the stiff part with `q_slow` frozen (the fast flow and its slow-momentum drift).
    FrozenSlow,
    /// The full Hamiltonian.
    Full,
}

/// Stability bound on micro steps: `0.2·√ε / ‖K(q_slow)‖₂^½`.
pub fn max_stable_micro_step(system: &QuasiQuadraticSystem, q_slow: &DVector<f64>) -> Result<f64> {
    let st = system.stiffness_at(q_slow)?;
    if st.k.is_empty() {
        return Ok(f64::INFINITY);
    }
    let lmax =
        st.k.symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |a, x| a.max(x.abs()));
    if lmax == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(0.2 * system.epsilon().sqrt() / lmax.sqrt())
}

/// Velocity Verlet with a micro step over `[0, T]`.
///
/// The step is shrunk to `T/⌈T/h_micro⌉` so the endpoint lands on `T`.
/// Fails if `h_micro` violates [`max_stable_micro_step`] at the initial
/// state, or if the monitored energy grows beyond ten times its initial size.
pub fn fine_verlet_flow(
    system: &QuasiQuadraticSystem,
    state: &PhaseState,
    h_micro: f64,
    total_time: f64,
    mode: VerletMode,
) -> Result<PhaseState> {
    system.check_state(state)?;
    if !(h_micro > 0.0 && h_micro.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "micro step must be positive, got {h_micro}"
        )));
    }
    if !(total_time >= 0.0 && total_time.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "total time must be non-negative, got {total_time}"
        )));
    }
    let bound = max_stable_micro_step(system, &state.q_slow)?;
    if h_micro > bound * (1.0 + 1e-12) {
        return Err(Error::Unstable(format!(
            "micro step {h_micro:e} exceeds the stability bound {bound:e}"
        )));
    }
    let steps = (total_time / h_micro - 1e-9).ceil().max(0.0) as usize;
    if steps == 0 {
        return Ok(state.clone());
    }
    let h = total_time / steps as f64;
    match mode {
        VerletMode::Full => verlet_full(system, state, h, steps),
        VerletMode::FrozenSlow => verlet_frozen(system, state, h, steps),
    }
}

const ENERGY_CHECK_EVERY: usize = 64;

fn check_growth(e0: f64, e: f64, step: usize) -> Result<()> {
    if !e.is_finite() || (e - e0).abs() > 10.0 * e0.abs().max(1e-12) {
        return Err(Error::Unstable(format!(
            "energy went from {e0:e} to {e:e} by micro step {step}"
        )));
    }
    Ok(())
}

fn verlet_full(
    system: &QuasiQuadraticSystem,
    state: &PhaseState,
    h: f64,
    steps: usize,
) -> Result<PhaseState> {
    let mut s = state.clone();
    let e0 = crate::phase::energy(system, &s)?;
    let (mut gf, mut gs) = system.full_force_gradient(&s)?;
    for k in 1..=steps {
        s.p_fast -= &gf * (0.5 * h);
        s.p_slow -= &gs * (0.5 * h);
        s.q_fast += &s.p_fast * h;
        s.q_slow += &s.p_slow * h;
        (gf, gs) = system.full_force_gradient(&s)?;
        s.p_fast -= &gf * (0.5 * h);
        s.p_slow -= &gs * (0.5 * h);
        if k % ENERGY_CHECK_EVERY == 0 || k == steps {
            check_growth(e0, crate::phase::energy(system, &s)?, k)?;
        }
    }
    Ok(s)
}

fn verlet_frozen(
    system: &QuasiQuadraticSystem,
    state: &PhaseState,
    h: f64,
    steps: usize,
) -> Result<PhaseState> {
    let st = system.stiffness_at(&state.q_slow)?;
    let inv_eps = 1.0 / system.epsilon();
    let k = &st.k * inv_eps;
    let dk: Vec<DMatrix<f64>> = st.dk.iter().map(|m| m * (0.5 * inv_eps)).collect();
    let fast_energy =
        |q: &DVector<f64>, p: &DVector<f64>| 0.5 * p.norm_squared() + 0.5 * q.dot(&(&k * q));
    let drift =
        |q: &DVector<f64>| DVector::from_iterator(dk.len(), dk.iter().map(|m| q.dot(&(m * q))));

    let mut s = state.clone();
    let e0 = fast_energy(&s.q_fast, &s.p_fast);
    let mut force = -(&k * &s.q_fast);
    let mut slow_force = -drift(&s.q_fast);
    for step in 1..=steps {
        s.p_fast += &force * (0.5 * h);
        s.p_slow += &slow_force * (0.5 * h);
        s.q_fast += &s.p_fast * h;
        force = -(&k * &s.q_fast);
        slow_force = -drift(&s.q_fast);
        s.p_fast += &force * (0.5 * h);
        s.p_slow += &slow_force * (0.5 * h);
        if step % ENERGY_CHECK_EVERY == 0 || step == steps {
            check_growth(e0, fast_energy(&s.q_fast, &s.p_fast), step)?;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expm::symplectic_expm;
    use crate::linalg::{canonical_j, max_abs};
    use std::f64::consts::PI;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn identity_stiffness_gives_rotation() {
        let h = 0.7;
        let f = expm_diagonalization(&DMatrix::identity(2, 2), 1.0, h).unwrap();
        let (s, c) = h.sin_cos();
        let i = DMatrix::<f64>::identity(2, 2);
        let want = block2(&(&i * c), &(&i * s), &(&i * -s), &(&i * c));
        assert!(max_abs(&(f - want)) < 1e-15);
    }

    #[test]
    fn diagonal_stiffness_gives_per_mode_rotations() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let f = expm_diagonalization(&k, 1.0, 0.5).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        for (j, w) in [1.0_f64, 2.0].into_iter().enumerate() {
            let (s, c) = (w * 0.5).sin_cos();
            want[(j, j)] = c;
            want[(j, j + 2)] = s / w;
            want[(j + 2, j)] = -w * s;
            want[(j + 2, j + 2)] = c;
        }
        assert!(max_abs(&(f - want)) < 1e-14);
    }

    #[test]
    fn diagonalization_is_symplectic_and_adjoint_is_inverse_transpose() {
        let k = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.1, 0.5, 2.0, -0.3, 0.1, -0.3, 1.0]);
        let t = van_loan_diagonalization(&k, std::slice::from_ref(&k), 0.01, 0.37).unwrap();
        let j = canonical_j(3);
        assert!(max_abs(&(t.f3.transpose() * &j * &t.f3 - &j)) < 1e-10);
        assert!(max_abs(&(t.f2.transpose() * &t.f3 - DMatrix::identity(6, 6))) < 1e-10);
    }

    #[test]
    fn rejects_indefinite_stiffness() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            expm_diagonalization(&k, 1.0, 0.1),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn agrees_with_symplectic_expm_on_nondiag3d() {
        let x: f64 = 1.1;
        let k =
            DMatrix::from_row_slice(2, 2, &[1.0 + x * x, x * x - 1.0, x * x - 1.0, 3.0 * x * x]);
        let eps = 1e-4;
        let exact = expm_diagonalization(&k, eps, 0.1).unwrap();
        let approx = symplectic_expm(&k, &[], eps, 0.1, 12).unwrap().f3;
        // position rows are O(1); the momentum row carries factors of ω
        let rows = (exact.rows(0, 2) - approx.rows(0, 2)).amax();
        assert!(rows <= 1e-5, "{rows:e}");
        let w = (k.symmetric_eigenvalues().max() / eps).sqrt();
        let momenta = (exact.rows(2, 2) - approx.rows(2, 2)).amax() / w;
        assert!(momenta <= 2e-5, "{momenta:e}");
    }

    #[test]
    fn taylor_of_zero_is_identity_and_scalar_is_exp() {
        assert_eq!(
            expm_taylor_squaring(&DMatrix::zeros(3, 3), 5),
            DMatrix::identity(3, 3)
        );
        let e = expm_taylor_squaring(&scalar(2f64.ln()), 10);
        assert!((e[(0, 0)] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn taylor_triple_matches_full_block_power() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.5]);
        let dk = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, -0.5])];
        let gen = BlockGenerator::new(&k, &dk, 0.5).unwrap();
        let full = expm_taylor_squaring(&(gen.van_loan(0) * 0.3), 6);
        let t = taylor_triple(&k, &dk, 0.5, 0.3, 6).unwrap();
        assert!(max_abs(&(crate::linalg::block(&full, 0, 1, 4) - &t.g2[0])) < 1e-12);
        assert!(max_abs(&(crate::linalg::block(&full, 1, 1, 4) - &t.f3)) < 1e-12);
    }

    #[test]
    fn analytic_flow_zero_time_is_identity() {
        let s = PhaseState::new(
            DVector::from_vec(vec![0.3]),
            DVector::from_vec(vec![-0.2]),
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap();
        let out = analytic_flow_1d(&s, 2.0, &[1.0], 0.1, 0.0).unwrap();
        assert!((out.to_flat() - s.to_flat()).amax() < 1e-15);
    }

    #[test]
    fn analytic_flow_full_period() {
        let s = PhaseState::new(
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let dk = 0.8;
        let out = analytic_flow_1d(&s, 1.0, &[dk], 1.0, 2.0 * PI).unwrap();
        assert!((out.q_fast[0] - 1.0).abs() < 1e-12 && out.p_fast[0].abs() < 1e-12);
        let w = 1.0_f64;
        let want = -0.5 * dk * (1.0 / (4.0 * w.powi(3))) * 2.0 * w * w * w * 2.0 * PI;
        assert!((out.p_slow[0] - want).abs() < 1e-12);
    }

    #[test]
    fn analytic_flow_requires_one_fast_dimension() {
        assert!(matches!(
            analytic_flow_1d(&PhaseState::zeros(2, 1), 1.0, &[1.0], 1.0, 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn verlet_at_rest_stays_at_rest() {
        let sys =
            QuasiQuadraticSystem::constant_stiffness(DMatrix::identity(1, 1), 1, 1e-2).unwrap();
        let out =
            fine_verlet_flow(&sys, &PhaseState::zeros(1, 1), 1e-3, 1.0, VerletMode::Full).unwrap();
        assert_eq!(out, PhaseState::zeros(1, 1));
    }

    #[test]
    fn verlet_rejects_unstable_micro_step() {
        let sys =
            QuasiQuadraticSystem::constant_stiffness(DMatrix::identity(1, 1), 1, 1e-4).unwrap();
        let r = fine_verlet_flow(
            &sys,
            &PhaseState::zeros(1, 1),
            0.01,
            1.0,
            VerletMode::FrozenSlow,
        );
        assert!(matches!(r, Err(Error::Unstable(_))));
    }
}
