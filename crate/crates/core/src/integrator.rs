//! Coarse-step splitting integrator: a soft-force drift/kick on the slow
//! variables followed by the exact-structure fast flow built from an
//! exponential triple, plus a symplectic Euler baseline.

use nalgebra::DVector;

use crate::error::{dim_err, Error, Result};
use crate::expm::{max_squarings, symplectic_expm, ExpTriple};
use crate::iterative::{iter_init, iter_update, IterState, SeedBackend};
use crate::oracles::{fine_verlet_flow, taylor_triple, van_loan_diagonalization, VerletMode};
use crate::phase::{energy, PhaseState, QuasiQuadraticSystem};

/// How the fast flow over one coarse step is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    /// Verlet-seeded block squaring.
    Symplectic,
    /// Base blocks updated from the previous step, then squared.
    Iterative,
    /// Closed form via eigendecomposition of `K`.
    Diagonalization,
    /// First-order Taylor seed squared (not symplectic).
    TaylorSquaring,
    /// Micro-step Verlet of the fast subsystem with `q_slow` frozen.
    FineVerletPhi3 { h_micro: f64 },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Symplectic => "symplectic",
            Backend::Iterative => "iterative",
            Backend::Diagonalization => "diag",
            Backend::TaylorSquaring => "expm-taylor",
            Backend::FineVerletPhi3 { .. } => "fine-verlet",
        }
    }

    /// Parses the names used by [`Backend::name`]; `fine-verlet` takes its
    /// micro step from `h_micro`.
    pub fn parse(name: &str, h_micro: f64) -> Result<Self> {
        match name {
            "symplectic" => Ok(Backend::Symplectic),
            "iterative" => Ok(Backend::Iterative),
            "diag" | "diagonalization" => Ok(Backend::Diagonalization),
            "expm-taylor" | "taylor" => Ok(Backend::TaylorSquaring),
            "fine-verlet" => Ok(Backend::FineVerletPhi3 { h_micro }),
            other => Err(Error::InvalidParameter(format!(
                "unknown backend '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub big_h: f64,
    pub n: u32,
    pub backend: Backend,
    pub total_time: f64,
}

impl StepperConfig {
    pub fn new(big_h: f64, n: u32, backend: Backend, total_time: f64) -> Result<Self> {
        let c = StepperConfig {
            big_h,
            n,
            backend,
            total_time,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.big_h > 0.0 && self.big_h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "H must be positive, got {}",
                self.big_h
            )));
        }
        if !(self.total_time >= self.big_h * (1.0 - 1e-12) && self.total_time.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "T must be at least H, got T = {} and H = {}",
                self.total_time, self.big_h
            )));
        }
        match self.backend {
            Backend::Symplectic | Backend::Iterative | Backend::TaylorSquaring if self.n < 1 => {
                Err(Error::InvalidParameter(
                    "squaring depth must be at least 1".into(),
                ))
            }
            Backend::FineVerletPhi3 { h_micro } if !(h_micro > 0.0) => Err(
                Error::InvalidParameter(format!("micro step must be positive, got {h_micro}")),
            ),
            _ => Ok(()),
        }
    }

    /// `⌈T/H⌉`, ignoring roundoff in the ratio.
    pub fn steps(&self) -> usize {
        (self.total_time / self.big_h - 1e-9).ceil().max(1.0) as usize
    }
}

/// Drift the slow positions by `H p_slow`, then kick both momenta by
/// `−H ∇V` evaluated at the drifted position.
pub fn phi12_step(
    system: &QuasiQuadraticSystem,
    state: &PhaseState,
    big_h: f64,
) -> Result<PhaseState> {
    system.check_state(state)?;
    let mut s = state.clone();
    s.q_slow += &s.p_slow * big_h;
    let (gf, gs) = system.potential_gradient(&s.q_fast, &s.q_slow)?;
    s.p_fast -= gf * big_h;
    s.p_slow -= gs * big_h;
    Ok(s)
}

/// Fast flow from a triple: `x ← F₃x` and `p_slow,ᵢ −= ½ xᵀF₃ᵀG₂,ᵢx` with
/// `x = [q_fast; p_fast]` taken before the update.
pub fn phi3_step(state: &PhaseState, triple: &ExpTriple) -> Result<PhaseState> {
    if triple.d_fast() != state.d_fast()
        || triple.d_slow() != state.d_slow()
        || triple.f2.shape() != triple.f3.shape()
    {
        return Err(dim_err(format!(
            "triple is for ({}, {}) but state is ({}, {})",
            triple.d_fast(),
            triple.d_slow(),
            state.d_fast(),
            state.d_slow()
        )));
    }
    let x = state.fast();
    let fx = &triple.f3 * &x;
    let mut s = state.clone();
    for (i, g) in triple.g2.iter().enumerate() {
        s.p_slow[i] -= 0.5 * fx.dot(&(g * &x));
    }
    s.set_fast(&fx);
    Ok(s)
}

/// Integrator with the state needed by the iterative backend.
#[derive(Debug, Clone)]
pub struct Stepper {
    system: QuasiQuadraticSystem,
    config: StepperConfig,
    iter: Option<IterState>,
}

/// A completed coarse step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PhaseState,
    pub mult_count: u64,
    pub triple: Option<ExpTriple>,
}

impl Stepper {
    pub fn new(system: QuasiQuadraticSystem, config: StepperConfig) -> Result<Self> {
        config.validate()?;
        if matches!(config.backend, Backend::Symplectic | Backend::Iterative) {
            let limit = max_squarings(system.epsilon());
            if config.n > limit {
                return Err(Error::InvalidParameter(format!(
                    "squaring depth {} exceeds {limit} for epsilon = {:e}",
                    config.n,
                    system.epsilon()
                )));
            }
        }
        Ok(Stepper {
            system,
            config,
            iter: None,
        })
    }

    pub fn system(&self) -> &QuasiQuadraticSystem {
        &self.system
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    /// Exponential triple at slow position `q_slow`, advancing the iterative
    /// state when that backend is selected.
    fn triple_at(&mut self, q_slow: &DVector<f64>) -> Result<ExpTriple> {
        let st = self.system.stiffness_at(q_slow)?;
        let eps = self.system.epsilon();
        let (h, n) = (self.config.big_h, self.config.n);
        match self.config.backend {
            Backend::Symplectic => symplectic_expm(&st.k, &st.dk, eps, h, n),
            Backend::Diagonalization => van_loan_diagonalization(&st.k, &st.dk, eps, h),
            Backend::TaylorSquaring => taylor_triple(&st.k, &st.dk, eps, h, n),
            Backend::Iterative => {
                let state = match self.iter.take() {
                    Some(s) => s,
                    None => iter_init(&st.k, &st.dk, eps, h, n, SeedBackend::Verlet)?,
                };
                let (next, triple) = iter_update(state, &st.k, &st.dk, n)?;
                self.iter = Some(next);
                Ok(triple)
            }
            Backend::FineVerletPhi3 { .. } => unreachable!("fine Verlet does not build a triple"),
        }
    }

    pub fn step(&mut self, state: &PhaseState) -> Result<StepOutcome> {
        let mid = phi12_step(&self.system, state, self.config.big_h)?;
        let out = match self.config.backend {
            Backend::FineVerletPhi3 { h_micro } => StepOutcome {
                state: fine_verlet_flow(
                    &self.system,
                    &mid,
                    h_micro,
                    self.config.big_h,
                    VerletMode::FrozenSlow,
                )?,
                mult_count: 0,
                triple: None,
            },
            _ => {
                let triple = self.triple_at(&mid.q_slow)?;
                if !crate::linalg::all_finite(&triple.f3)
                    || triple.g2.iter().any(|g| !crate::linalg::all_finite(g))
                {
                    return Err(Error::NonFinite("exponential triple"));
                }
                StepOutcome {
                    state: phi3_step(&mid, &triple)?,
                    mult_count: triple.mult_count,
                    triple: Some(triple),
                }
            }
        };
        if !out.state.is_finite() {
            return Err(Error::NonFinite("state after step"));
        }
        Ok(out)
    }
}

/// One coarse step with a fresh [`Stepper`].
pub fn step(
    system: &QuasiQuadraticSystem,
    state: &PhaseState,
    config: &StepperConfig,
) -> Result<PhaseState> {
    Ok(Stepper::new(system.clone(), *config)?.step(state)?.state)
}

/// Recorded states and per-step diagnostics. Index 0 is the initial state
/// with `mult_count = 0` and zero wall time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub energy: Vec<f64>,
    pub adiabatic_invariant: Vec<Option<f64>>,
    pub mult_count: Vec<u64>,
    /// Seconds spent in each step.
    pub wall_time: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&PhaseState> {
        self.states.last()
    }

    fn push(&mut self, t: f64, state: PhaseState, e: f64, inv: Option<f64>, mults: u64, wall: f64) {
        self.times.push(t);
        self.states.push(state);
        self.energy.push(e);
        self.adiabatic_invariant.push(inv);
        self.mult_count.push(mults);
        self.wall_time.push(wall);
    }
}

/// A simulation that stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Aborted {
    pub partial: Trajectory,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "aborted after {} steps: {}",
            self.partial.len().saturating_sub(1),
            self.error
        )
    }
}

impl std::error::Error for Aborted {}

pub type Invariant<'a> = &'a (dyn Fn(&PhaseState) -> Option<f64> + Sync);

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> impl FnMut() -> f64 {
    let mut last = std::time::Instant::now();
    move || {
        let now = std::time::Instant::now();
        let dt = now.duration_since(last).as_secs_f64();
        last = now;
        dt
    }
}

#[cfg(target_arch = "wasm32")]
fn clock() -> impl FnMut() -> f64 {
    || 0.0
}

/// Run `⌈T/H⌉` coarse steps, recording energy, the optional invariant,
/// multiplication counts and wall time.
pub fn simulate_with(
    system: &QuasiQuadraticSystem,
    state0: &PhaseState,
    config: &StepperConfig,
    invariant: Option<Invariant<'_>>,
) -> std::result::Result<Trajectory, Aborted> {
    let mut traj = Trajectory::default();
    let fail = |traj: Trajectory, error: Error| Aborted {
        partial: traj,
        error,
    };
    let mut stepper = match Stepper::new(system.clone(), *config)
        .and_then(|s| system.check_state(state0).map(|_| s))
    {
        Ok(s) => s,
        Err(e) => return Err(fail(traj, e)),
    };
    let inv = |s: &PhaseState| invariant.and_then(|f| f(s));
    match energy(system, state0) {
        Ok(e) => traj.push(0.0, state0.clone(), e, inv(state0), 0, 0.0),
        Err(e) => return Err(fail(traj, e)),
    }
    let mut tick = clock();
    let mut state = state0.clone();
    for k in 1..=config.steps() {
        tick();
        let out = match stepper.step(&state) {
            Ok(o) => o,
            Err(e) => return Err(fail(traj, e)),
        };
        let wall = tick();
        let e = match energy(system, &out.state) {
            Ok(e) => e,
            Err(e) => return Err(fail(traj, e)),
        };
        state = out.state;
        traj.push(
            k as f64 * config.big_h,
            state.clone(),
            e,
            inv(&state),
            out.mult_count,
            wall,
        );
    }
    Ok(traj)
}

pub fn simulate(
    system: &QuasiQuadraticSystem,
    state0: &PhaseState,
    config: &StepperConfig,
) -> std::result::Result<Trajectory, Aborted> {
    simulate_with(system, state0, config, None)
}

/// Simulate a scenario from its own initial condition, recording its
/// adiabatic invariant when it has one.
pub fn simulate_scenario(
    scenario: &crate::scenarios::Scenario,
    config: &StepperConfig,
) -> std::result::Result<Trajectory, Aborted> {
    let inv = |s: &PhaseState| scenario.adiabatic_invariant(s);
    simulate_with(&scenario.system, &scenario.initial, config, Some(&inv))
}

/// Symplectic Euler on the full stiff system: kick by `−h∇(V + ε⁻¹U)` at
/// the current positions, then drift by `h` times the new momenta.
pub fn variational_euler_step(
    system: &QuasiQuadraticSystem,
    state: &PhaseState,
    h: f64,
) -> Result<PhaseState> {
    system.check_state(state)?;
    let (gf, gs) = system.full_force_gradient(state)?;
    let mut s = state.clone();
    s.p_fast -= gf * h;
    s.p_slow -= gs * h;
    s.q_fast += &s.p_fast * h;
    s.q_slow += &s.p_slow * h;
    if !s.is_finite() {
        return Err(Error::NonFinite("state after Euler step"));
    }
    Ok(s)
}

/// [`variational_euler_step`] repeated over `[0, T]` with the step shrunk to
/// land on `T`; fails if the energy grows beyond ten times its initial size.
pub fn variational_euler_flow(
    system: &QuasiQuadraticSystem,
    state: &PhaseState,
    h: f64,
    total_time: f64,
) -> Result<PhaseState> {
    if !(h > 0.0) || !(total_time >= 0.0) {
        return Err(Error::InvalidParameter(
            "Euler step and horizon must be positive".into(),
        ));
    }
    let steps = (total_time / h - 1e-9).ceil().max(0.0) as usize;
    if steps == 0 {
        return Ok(state.clone());
    }
    let h = total_time / steps as f64;
    let e0 = energy(system, state)?;
    let mut s = state.clone();
    for k in 1..=steps {
        s = variational_euler_step(system, &s, h)?;
        if k % 64 == 0 || k == steps {
            let e = energy(system, &s)?;
            if (e - e0).abs() > 10.0 * e0.abs().max(1e-12) {
                return Err(Error::Unstable(format!(
                    "energy went from {e0:e} to {e:e} by Euler step {k}"
                )));
            }
        }
    }
    Ok(s)
}
