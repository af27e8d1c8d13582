//! Browser bindings for the one-fast, one-slow ring model. The inner
//! functions return `String` errors so they can be tested natively; the
//! exported wrappers convert them to JS exceptions.

use multiscale_core::diagnostics::{resonance_scan, step_grid};
use multiscale_core::expm::structure_residuals;
use multiscale_core::integrator::simulate_scenario;
use multiscale_core::oracles::{taylor_triple, van_loan_diagonalization};
use multiscale_core::scenarios::diag1d;
use multiscale_core::{symplectic_expm, Backend, StepperConfig};
use wasm_bindgen::prelude::*;

/// One simulated trajectory, exposed column by column.
#[wasm_bindgen]
pub struct Run {
    times: Vec<f64>,
    q_slow: Vec<f64>,
    q_fast: Vec<f64>,
    energy: Vec<f64>,
    invariant: Vec<f64>,
    error: Option<String>,
}

#[wasm_bindgen]
impl Run {
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }
    pub fn q_slow(&self) -> Vec<f64> {
        self.q_slow.clone()
    }
    pub fn q_fast(&self) -> Vec<f64> {
        self.q_fast.clone()
    }
    /// Relative deviation from the initial energy.
    pub fn energy_drift(&self) -> Vec<f64> {
        let e0 = self.energy.first().copied().unwrap_or(1.0);
        self.energy.iter().map(|e| (e - e0) / e0.abs()).collect()
    }
    pub fn invariant(&self) -> Vec<f64> {
        self.invariant.clone()
    }
    /// Set when the run stopped early; the columns hold the partial path.
    pub fn error(&self) -> Option<String> {
        self.error.clone()
    }
}

pub fn run_ring(
    omega: f64,
    big_h: f64,
    n: u32,
    backend: &str,
    total_time: f64,
) -> Result<Run, String> {
    let sc = diag1d(omega).map_err(|e| e.to_string())?;
    let backend = Backend::parse(backend, 0.0).map_err(|e| e.to_string())?;
    if matches!(backend, Backend::FineVerletPhi3 { .. }) {
        return Err("fine-verlet is not offered here".into());
    }
    let cfg = StepperConfig::new(big_h, n, backend, total_time).map_err(|e| e.to_string())?;
    let (traj, error) = match simulate_scenario(&sc, &cfg) {
        Ok(t) => (t, None),
        Err(a) => (a.partial, Some(a.error.to_string())),
    };
    Ok(Run {
        times: traj.times,
        q_slow: traj.states.iter().map(|s| s.q_slow[0]).collect(),
        q_fast: traj.states.iter().map(|s| s.q_fast[0]).collect(),
        energy: traj.energy,
        invariant: traj
            .adiabatic_invariant
            .iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect(),
        error,
    })
}

/// Ratio of the coarse slow position to a micro-step reference at the end
/// of each run, one entry per step size; diverged runs give NaN.
pub fn ring_resonance(
    omega: f64,
    start: f64,
    stop: f64,
    step: f64,
    total_time: f64,
) -> Result<Vec<f64>, String> {
    let sc = diag1d(omega).map_err(|e| e.to_string())?;
    let grid = step_grid(start, stop, step).map_err(|e| e.to_string())?;
    if grid.len() > 400 {
        return Err(format!("grid has {} points, limit is 400", grid.len()));
    }
    let rep = resonance_scan(
        &sc.system,
        &sc.initial,
        &grid,
        total_time,
        0.01 / omega,
        Backend::Symplectic,
        10,
    )
    .map_err(|e| e.to_string())?;
    Ok(rep.ratios)
}

/// Symplecticity defect `‖FᵀJF − J‖` of the fast flow over one step for
/// block squaring, Taylor squaring and the closed form, in that order.
pub fn ring_residuals(omega: f64, big_h: f64, n: u32) -> Result<Vec<f64>, String> {
    let sc = diag1d(omega).map_err(|e| e.to_string())?;
    let st = sc
        .system
        .stiffness_at(&sc.initial.q_slow)
        .map_err(|e| e.to_string())?;
    let eps = sc.system.epsilon();
    let triples = [
        symplectic_expm(&st.k, &st.dk, eps, big_h, n),
        taylor_triple(&st.k, &st.dk, eps, big_h, n),
        van_loan_diagonalization(&st.k, &st.dk, eps, big_h),
    ];
    triples
        .into_iter()
        .map(|t| {
            t.map(|t| structure_residuals(&t).0)
                .map_err(|e| e.to_string())
        })
        .collect()
}

#[wasm_bindgen]
pub fn simulate(
    omega: f64,
    big_h: f64,
    n: u32,
    backend: &str,
    total_time: f64,
) -> Result<Run, JsError> {
    run_ring(omega, big_h, n, backend, total_time).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn resonance(
    omega: f64,
    start: f64,
    stop: f64,
    step: f64,
    total_time: f64,
) -> Result<Vec<f64>, JsError> {
    ring_resonance(omega, start, stop, step, total_time).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn residuals(omega: f64, big_h: f64, n: u32) -> Result<Vec<f64>, JsError> {
    ring_residuals(omega, big_h, n).map_err(|e| JsError::new(&e))
}
