//! Phase-space states, the quasi-quadratic model, and the canonical
//! symplectic form.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{block_diag, canonical_j, symmetrize};

/// Positions and momenta split into fast and slow blocks.
///
/// Flattened coordinates are always ordered `(q_fast, p_fast, q_slow, p_slow)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q_fast: DVector<f64>,
    pub p_fast: DVector<f64>,
    pub q_slow: DVector<f64>,
    pub p_slow: DVector<f64>,
}

impl PhaseState {
    pub fn new(
        q_fast: DVector<f64>,
        p_fast: DVector<f64>,
        q_slow: DVector<f64>,
        p_slow: DVector<f64>,
    ) -> Result<Self> {
        if q_fast.len() != p_fast.len() {
            return Err(dim_err(format!(
                "q_fast has {} entries but p_fast has {}",
                q_fast.len(),
                p_fast.len()
            )));
        }
        if q_slow.len() != p_slow.len() {
            return Err(dim_err(format!(
                "q_slow has {} entries but p_slow has {}",
                q_slow.len(),
                p_slow.len()
            )));
        }
        let state = PhaseState {
            q_fast,
            p_fast,
            q_slow,
            p_slow,
        };
        if !state.is_finite() {
            return Err(Error::NonFinite("phase state"));
        }
        Ok(state)
    }

    pub fn zeros(d_fast: usize, d_slow: usize) -> Self {
        PhaseState {
            q_fast: DVector::zeros(d_fast),
            p_fast: DVector::zeros(d_fast),
            q_slow: DVector::zeros(d_slow),
            p_slow: DVector::zeros(d_slow),
        }
    }

    pub fn d_fast(&self) -> usize {
        self.q_fast.len()
    }

    pub fn d_slow(&self) -> usize {
        self.q_slow.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q_fast
            .iter()
            .chain(self.p_fast.iter())
            .chain(self.q_slow.iter())
            .chain(self.p_slow.iter())
            .all(|x| x.is_finite())
    }

    /// Stacked fast coordinates `[q_fast; p_fast]`.
    pub fn fast(&self) -> DVector<f64> {
        let d = self.d_fast();
        let mut x = DVector::zeros(2 * d);
        x.rows_mut(0, d).copy_from(&self.q_fast);
        x.rows_mut(d, d).copy_from(&self.p_fast);
        x
    }

    pub fn set_fast(&mut self, x: &DVector<f64>) {
        let d = self.d_fast();
        self.q_fast.copy_from(&x.rows(0, d));
        self.p_fast.copy_from(&x.rows(d, d));
    }

    /// All positions `(q_fast, q_slow)`.
    pub fn positions(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.d_fast() + self.d_slow());
        q.rows_mut(0, self.d_fast()).copy_from(&self.q_fast);
        q.rows_mut(self.d_fast(), self.d_slow())
            .copy_from(&self.q_slow);
        q
    }

    /// All momenta `(p_fast, p_slow)`.
    pub fn momenta(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.d_fast() + self.d_slow());
        p.rows_mut(0, self.d_fast()).copy_from(&self.p_fast);
        p.rows_mut(self.d_fast(), self.d_slow())
            .copy_from(&self.p_slow);
        p
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let (df, ds) = (self.d_fast(), self.d_slow());
        let mut x = DVector::zeros(2 * (df + ds));
        x.rows_mut(0, df).copy_from(&self.q_fast);
        x.rows_mut(df, df).copy_from(&self.p_fast);
        x.rows_mut(2 * df, ds).copy_from(&self.q_slow);
        x.rows_mut(2 * df + ds, ds).copy_from(&self.p_slow);
        x
    }

    pub fn from_flat(d_fast: usize, d_slow: usize, x: &DVector<f64>) -> Result<Self> {
        if x.len() != 2 * (d_fast + d_slow) {
            return Err(dim_err(format!(
                "flat state has {} entries, expected {}",
                x.len(),
                2 * (d_fast + d_slow)
            )));
        }
        Ok(PhaseState {
            q_fast: x.rows(0, d_fast).into_owned(),
            p_fast: x.rows(d_fast, d_fast).into_owned(),
            q_slow: x.rows(2 * d_fast, d_slow).into_owned(),
            p_slow: x.rows(2 * d_fast + d_slow, d_slow).into_owned(),
        })
    }
}

pub type PotentialFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type PotentialGradFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;
pub type StiffnessFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type StiffnessGradFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// `K(q_slow)` and its partial derivatives `∂ᵢK`, symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct Stiffness {
    pub k: DMatrix<f64>,
    pub dk: Vec<DMatrix<f64>>,
}

impl Stiffness {
    /// Errors if the smallest eigenvalue of `K` is not positive.
    pub fn check_positive_definite(&self) -> Result<()> {
        if self.k.is_empty() {
            return Ok(());
        }
        let min = self.k.clone().symmetric_eigenvalues().min();
        if min > 0.0 {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite(min))
        }
    }
}

/// Soft potential `V(q_fast, q_slow)`, stiffness `K(q_slow)` with its
/// gradient, and the stiffness scale `ε`. The mass matrix is the identity.
#[derive(Clone)]
pub struct QuasiQuadraticSystem {
    d_fast: usize,
    d_slow: usize,
    epsilon: f64,
    potential: PotentialFn,
    potential_grad: PotentialGradFn,
    stiffness: StiffnessFn,
    stiffness_grad: StiffnessGradFn,
}

impl fmt::Debug for QuasiQuadraticSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuasiQuadraticSystem")
            .field("d_fast", &self.d_fast)
            .field("d_slow", &self.d_slow)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl QuasiQuadraticSystem {
    /// A system with `V ≡ 0`; attach a soft potential with
    /// [`with_potential`](Self::with_potential).
    pub fn new<K, DK>(
        d_fast: usize,
        d_slow: usize,
        epsilon: f64,
        stiffness: K,
        stiffness_grad: DK,
    ) -> Result<Self>
    where
        K: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        DK: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(QuasiQuadraticSystem {
            d_fast,
            d_slow,
            epsilon,
            potential: Arc::new(|_, _| 0.0),
            potential_grad: Arc::new(move |qf, qs| {
                (DVector::zeros(qf.len()), DVector::zeros(qs.len()))
            }),
            stiffness: Arc::new(stiffness),
            stiffness_grad: Arc::new(stiffness_grad),
        })
    }

    /// Stiffness independent of the slow variables.
    pub fn constant_stiffness(k: DMatrix<f64>, d_slow: usize, epsilon: f64) -> Result<Self> {
        if !k.is_square() {
            return Err(dim_err("stiffness must be square"));
        }
        let d_fast = k.nrows();
        let zero = DMatrix::zeros(d_fast, d_fast);
        Self::new(
            d_fast,
            d_slow,
            epsilon,
            move |_| k.clone(),
            move |_| vec![zero.clone(); d_slow],
        )
    }

    pub fn with_potential<V, G>(mut self, potential: V, gradient: G) -> Self
    where
        V: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    {
        self.potential = Arc::new(potential);
        self.potential_grad = Arc::new(gradient);
        self
    }

    /// Same model with a different stiffness scale.
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn d_fast(&self) -> usize {
        self.d_fast
    }

    pub fn d_slow(&self) -> usize {
        self.d_slow
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn check_state(&self, state: &PhaseState) -> Result<()> {
        if state.q_fast.len() != self.d_fast
            || state.p_fast.len() != self.d_fast
            || state.q_slow.len() != self.d_slow
            || state.p_slow.len() != self.d_slow
        {
            return Err(dim_err(format!(
                "state is ({}, {}) but system is ({}, {})",
                state.q_fast.len(),
                state.q_slow.len(),
                self.d_fast,
                self.d_slow
            )));
        }
        Ok(())
    }

    pub fn potential(&self, q_fast: &DVector<f64>, q_slow: &DVector<f64>) -> f64 {
        (self.potential)(q_fast, q_slow)
    }

    /// `(∂V/∂q_fast, ∂V/∂q_slow)`.
    pub fn potential_gradient(
        &self,
        q_fast: &DVector<f64>,
        q_slow: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let (gf, gs) = (self.potential_grad)(q_fast, q_slow);
        if gf.len() != self.d_fast || gs.len() != self.d_slow {
            return Err(dim_err("potential gradient has the wrong length"));
        }
        if gf.iter().chain(gs.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("soft potential gradient"));
        }
        Ok((gf, gs))
    }

    /// Evaluate `K` and `∇K` at `q_slow`, both symmetrized.
    pub fn stiffness_at(&self, q_slow: &DVector<f64>) -> Result<Stiffness> {
        if q_slow.len() != self.d_slow {
            return Err(dim_err(format!(
                "q_slow has {} entries, expected {}",
                q_slow.len(),
                self.d_slow
            )));
        }
        let k = (self.stiffness)(q_slow);
        if k.nrows() != self.d_fast || k.ncols() != self.d_fast {
            return Err(dim_err(
                "stiffness callback returned a matrix of the wrong shape",
            ));
        }
        let dk = (self.stiffness_grad)(q_slow);
        if dk.len() != self.d_slow
            || dk
                .iter()
                .any(|m| m.nrows() != self.d_fast || m.ncols() != self.d_fast)
        {
            return Err(dim_err(
                "stiffness gradient callback returned the wrong shape",
            ));
        }
        if k.iter()
            .chain(dk.iter().flat_map(|m| m.iter()))
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("stiffness"));
        }
        Ok(Stiffness {
            k: symmetrize(&k),
            dk: dk.iter().map(symmetrize).collect(),
        })
    }

    /// Gradient of the full potential `V + ε⁻¹U` split into fast and slow parts.
    pub fn full_force_gradient(&self, state: &PhaseState) -> Result<(DVector<f64>, DVector<f64>)> {
        let (mut gf, mut gs) = self.potential_gradient(&state.q_fast, &state.q_slow)?;
        let st = self.stiffness_at(&state.q_slow)?;
        let inv_eps = 1.0 / self.epsilon;
        gf += &st.k * &state.q_fast * inv_eps;
        for (i, dk) in st.dk.iter().enumerate() {
            gs[i] += 0.5 * inv_eps * state.q_fast.dot(&(dk * &state.q_fast));
        }
        Ok((gf, gs))
    }
}

/// `½(|p_fast|² + |p_slow|²) + V(q) + (1/2ε) q_fastᵀ K(q_slow) q_fast`.
pub fn energy(system: &QuasiQuadraticSystem, state: &PhaseState) -> Result<f64> {
    system.check_state(state)?;
    let kinetic = 0.5 * (state.p_fast.norm_squared() + state.p_slow.norm_squared());
    let soft = system.potential(&state.q_fast, &state.q_slow);
    let k = system.stiffness_at(&state.q_slow)?.k;
    let stiff = 0.5 / system.epsilon() * state.q_fast.dot(&(&k * &state.q_fast));
    let e = kinetic + soft + stiff;
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::NonFinite("energy"))
    }
}

/// Block-diagonal canonical form: one `J` block per listed half-dimension.
///
/// `SymplecticForm::canonical(d)` is `J` on `R^{2d}`; `SymplecticForm::split(d_f, d_s)`
/// is the full-space `diag(J_f, J_s)` in `(q_fast, p_fast, q_slow, p_slow)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymplecticForm {
    halves: Vec<usize>,
}

impl SymplecticForm {
    pub fn canonical(dim: usize) -> Self {
        SymplecticForm { halves: vec![dim] }
    }

    pub fn split(d_fast: usize, d_slow: usize) -> Self {
        SymplecticForm {
            halves: vec![d_fast, d_slow],
        }
    }

    /// Total size of the represented matrix.
    pub fn size(&self) -> usize {
        2 * self.halves.iter().sum::<usize>()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = self.halves.iter().map(|&d| canonical_j(d)).collect();
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        block_diag(&refs)
    }
}
