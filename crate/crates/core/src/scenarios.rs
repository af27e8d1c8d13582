//! Benchmark systems: a 2-DOF diagonal-stiffness problem, a 3-DOF problem
//! with non-diagonal stiffness, a Toeplitz stiffness chain, and
//! user-supplied affine-stiffness systems.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::phase::{PhaseState, QuasiQuadraticSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Diag1d,
    Nondiag3d,
    Toeplitz,
    Custom,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Diag1d => "diag1d",
            ScenarioKind::Nondiag3d => "nondiag3d",
            ScenarioKind::Toeplitz => "toeplitz",
            ScenarioKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag1d" => Ok(ScenarioKind::Diag1d),
            "nondiag3d" => Ok(ScenarioKind::Nondiag3d),
            "toeplitz" => Ok(ScenarioKind::Toeplitz),
            "custom" | "custom-file" => Ok(ScenarioKind::Custom),
            other => Err(Error::InvalidParameter(format!(
                "unknown scenario '{other}'"
            ))),
        }
    }
}

/// A system together with its initial condition.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub system: QuasiQuadraticSystem,
    pub initial: PhaseState,
    /// Fast frequency scale, `ε = ω⁻²`.
    pub omega: f64,
}

impl Scenario {
    /// The action-like quantity `p_y²/(2√(1+x²)) + √(1+x²) ω² y²/2` for
    /// [`diag1d`]; `None` for the other systems.
    pub fn adiabatic_invariant(&self, state: &PhaseState) -> Option<f64> {
        match self.kind {
            ScenarioKind::Diag1d => {
                crate::diagnostics::adiabatic_invariant_ex1(state, self.omega).ok()
            }
            _ => None,
        }
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if omega > 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "omega must be positive, got {omega}"
        )))
    }
}

/// `(|q|² − 1)²` and its gradient over the concatenation of fast and slow positions.
fn ring_potential(qf: &DVector<f64>, qs: &DVector<f64>) -> f64 {
    let r = qf.norm_squared() + qs.norm_squared() - 1.0;
    r * r
}

fn ring_gradient(qf: &DVector<f64>, qs: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let r = qf.norm_squared() + qs.norm_squared() - 1.0;
    (qf * (4.0 * r), qs * (4.0 * r))
}

/// Slow `x`, fast `y`; `V = (x² + y² − 1)²`, `K(x) = 1 + x²`, `ε = ω⁻²`,
/// starting at `x = 1.1`, `y = 0.7/ω`, at rest.
pub fn diag1d(omega: f64) -> Result<Scenario> {
    check_omega(omega)?;
    let system = QuasiQuadraticSystem::new(
        1,
        1,
        omega.powi(-2),
        |qs| DMatrix::from_element(1, 1, 1.0 + qs[0] * qs[0]),
        |qs| vec![DMatrix::from_element(1, 1, 2.0 * qs[0])],
    )?
    .with_potential(ring_potential, ring_gradient);
    let initial = PhaseState::new(
        DVector::from_element(1, 0.7 / omega),
        DVector::zeros(1),
        DVector::from_element(1, 1.1),
        DVector::zeros(1),
    )?;
    Ok(Scenario {
        kind: ScenarioKind::Diag1d,
        system,
        initial,
        omega,
    })
}

/// Slow `x`, fast `(y, z)`; `V = (x² + y² + z² − 1)²`,
/// `K(x) = [[1 + x², x² − 1], [x² − 1, 3x²]]`, starting at `x = 1.1`,
/// `y = 0.2/ω`, `z = 0.1/ω`, at rest.
pub fn nondiag3d(omega: f64) -> Result<Scenario> {
    check_omega(omega)?;
    let system = QuasiQuadraticSystem::new(
        2,
        1,
        omega.powi(-2),
        |qs| {
            let x2 = qs[0] * qs[0];
            DMatrix::from_row_slice(2, 2, &[1.0 + x2, x2 - 1.0, x2 - 1.0, 3.0 * x2])
        },
        |qs| {
            let x = qs[0];
            vec![DMatrix::from_row_slice(
                2,
                2,
                &[2.0 * x, 2.0 * x, 2.0 * x, 6.0 * x],
            )]
        },
    )?
    .with_potential(ring_potential, ring_gradient);
    let initial = PhaseState::new(
        DVector::from_vec(vec![0.2 / omega, 0.1 / omega]),
        DVector::zeros(2),
        DVector::from_element(1, 1.1),
        DVector::zeros(1),
    )?;
    Ok(Scenario {
        kind: ScenarioKind::Nondiag3d,
        system,
        initial,
        omega,
    })
}

/// `T(q)ⱼₖ = (q/2)^|j−k|`.
pub fn toeplitz_matrix(d: usize, q: f64) -> DMatrix<f64> {
    let r = q / 2.0;
    DMatrix::from_fn(d, d, |j, k| r.powi(j.abs_diff(k) as i32))
}

/// `dT/dq`, entrywise `½|j−k|(q/2)^(|j−k|−1)`.
pub fn toeplitz_derivative(d: usize, q: f64) -> DMatrix<f64> {
    let r = q / 2.0;
    DMatrix::from_fn(d, d, |j, k| {
        let m = j.abs_diff(k);
        if m == 0 {
            0.0
        } else {
            0.5 * m as f64 * r.powi(m as i32 - 1)
        }
    })
}

/// Slow `q`, fast `x ∈ R^d`; `V = (xᵀx + q² − 1)²`, `K(q) = T(q)`.
/// Starts at `q = 1.05` with `x` drawn from `N(0, (1/(ω√d))²)` using a
/// seeded ChaCha8 generator; all momenta zero.
pub fn toeplitz(omega: f64, d_fast: usize, seed: u64) -> Result<Scenario> {
    check_omega(omega)?;
    if d_fast == 0 {
        return Err(Error::InvalidParameter(
            "toeplitz needs at least one fast dimension".into(),
        ));
    }
    let system = QuasiQuadraticSystem::new(
        d_fast,
        1,
        omega.powi(-2),
        move |qs| toeplitz_matrix(d_fast, qs[0]),
        move |qs| vec![toeplitz_derivative(d_fast, qs[0])],
    )?
    .with_potential(ring_potential, ring_gradient);
    let std = 1.0 / (omega * (d_fast as f64).sqrt());
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_fast = DVector::from_fn(d_fast, |_, _| normal.sample(&mut rng));
    let initial = PhaseState::new(
        q_fast,
        DVector::zeros(d_fast),
        DVector::from_element(1, 1.05),
        DVector::zeros(1),
    )?;
    Ok(Scenario {
        kind: ScenarioKind::Toeplitz,
        system,
        initial,
        omega,
    })
}

/// A user-described system with affine stiffness `K(q) = K₀ + Σ qᵢ Kᵢ` and
/// quadratic soft potential `½ q_fastᵀ V_f q_fast + ½ q_slowᵀ V_s q_slow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomSpec {
    pub epsilon: f64,
    pub k0: Vec<Vec<f64>>,
    #[serde(default)]
    pub k_slope: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub v_fast: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub v_slow: Option<Vec<Vec<f64>>>,
    pub q_fast: Vec<f64>,
    #[serde(default)]
    pub p_fast: Option<Vec<f64>>,
    #[serde(default)]
    pub q_slow: Vec<f64>,
    #[serde(default)]
    pub p_slow: Option<Vec<f64>>,
}

fn square(rows: &[Vec<f64>], d: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(dim_err(format!("{what} must be {d}×{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn vector(v: Option<&Vec<f64>>, d: usize, what: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::zeros(d)),
        Some(v) if v.len() == d => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(dim_err(format!(
            "{what} has {} entries, expected {d}",
            v.len()
        ))),
    }
}

pub fn custom(spec: &CustomSpec) -> Result<Scenario> {
    let df = spec.k0.len();
    let ds = spec.q_slow.len();
    let k0 = square(&spec.k0, df, "k0")?;
    if spec.k_slope.len() != ds {
        return Err(dim_err(format!(
            "k_slope needs one matrix per slow variable ({ds})"
        )));
    }
    let slopes = spec
        .k_slope
        .iter()
        .map(|m| square(m, df, "k_slope entry"))
        .collect::<Result<Vec<_>>>()?;
    let vf = match &spec.v_fast {
        Some(m) => square(m, df, "v_fast")?,
        None => DMatrix::zeros(df, df),
    };
    let vs = match &spec.v_slow {
        Some(m) => square(m, ds, "v_slow")?,
        None => DMatrix::zeros(ds, ds),
    };
    let slopes_k = slopes.clone();
    let system = QuasiQuadraticSystem::new(
        df,
        ds,
        spec.epsilon,
        move |qs| {
            let mut k = k0.clone();
            for (qi, ki) in qs.iter().zip(&slopes_k) {
                k += ki * *qi;
            }
            k
        },
        move |_| slopes.clone(),
    )?;
    let (vf2, vs2) = (vf.clone(), vs.clone());
    let system = system.with_potential(
        move |qf, qs| 0.5 * (qf.dot(&(&vf * qf)) + qs.dot(&(&vs * qs))),
        move |qf, qs| {
            (
                crate::linalg::symmetrize(&vf2) * qf,
                crate::linalg::symmetrize(&vs2) * qs,
            )
        },
    );
    let initial = PhaseState::new(
        vector(Some(&spec.q_fast), df, "q_fast")?,
        vector(spec.p_fast.as_ref(), df, "p_fast")?,
        vector(Some(&spec.q_slow), ds, "q_slow")?,
        vector(spec.p_slow.as_ref(), ds, "p_slow")?,
    )?;
    system
        .stiffness_at(&initial.q_slow)?
        .check_positive_definite()?;
    Ok(Scenario {
        kind: ScenarioKind::Custom,
        system,
        initial,
        omega: spec.epsilon.powf(-0.5),
    })
}
