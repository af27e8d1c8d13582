//! Measurements: symplecticity residuals, finite-difference Jacobians,
//! energy norm, the adiabatic invariant, convergence studies, resonance
//! scans, operation counts, and a self-check suite.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::integrator::{simulate, Backend, StepperConfig};
use crate::linalg::max_abs;
use crate::oracles::{fine_verlet_flow, VerletMode};
use crate::phase::{PhaseState, QuasiQuadraticSystem, SymplecticForm};

/// Finite-difference step used when the caller has no preference.
pub const DEFAULT_FD_DELTA: f64 = 1e-6;

/// `|ratio − 1|` above which a coarse step counts as resonant.
pub const RESONANCE_THRESHOLD: f64 = 0.05;

/// `‖AᵀJA − J‖_∞` (max-abs entry).
pub fn symplectic_residual(a: &DMatrix<f64>, form: &SymplecticForm) -> Result<f64> {
    if !a.is_square() || !a.nrows().is_multiple_of(2) {
        return Err(dim_err(format!(
            "symplectic residual needs a square even matrix, got {:?}",
            a.shape()
        )));
    }
    if a.nrows() != form.size() {
        return Err(dim_err(format!(
            "matrix is {} but the form is {}",
            a.nrows(),
            form.size()
        )));
    }
    let j = form.matrix();
    Ok(max_abs(&(a.transpose() * &j * a - &j)))
}

/// Central-difference Jacobian of a state map; rows and columns follow the
/// flat order `(q_fast, p_fast, q_slow, p_slow)`.
pub fn jacobian_fd<F>(map: F, state: &PhaseState, delta: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&PhaseState) -> Result<PhaseState>,
{
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let (df, ds) = (state.d_fast(), state.d_slow());
    let x0 = state.to_flat();
    let n = x0.len();
    let mut jac = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut plus = x0.clone();
        plus[c] += delta;
        let mut minus = x0.clone();
        minus[c] -= delta;
        let fp = map(&PhaseState::from_flat(df, ds, &plus)?)?.to_flat();
        let fm = map(&PhaseState::from_flat(df, ds, &minus)?)?.to_flat();
        if fp.len() != n || fm.len() != n {
            return Err(dim_err("map changed the state dimensions"));
        }
        jac.set_column(c, &((fp - fm) / (2.0 * delta)));
    }
    Ok(jac)
}

/// `p_y²/(2√(1+x²)) + √(1+x²) ω² y²/2` for one slow `x` and one fast `y`.
pub fn adiabatic_invariant_ex1(state: &PhaseState, omega: f64) -> Result<f64> {
    if state.d_fast() != 1 || state.d_slow() != 1 {
        return Err(dim_err(format!(
            "adiabatic invariant needs one fast and one slow variable, got ({}, {})",
            state.d_fast(),
            state.d_slow()
        )));
    }
    let s = (1.0 + state.q_slow[0].powi(2)).sqrt();
    let (y, py) = (state.q_fast[0], state.p_fast[0]);
    Ok(py * py / (2.0 * s) + s * omega * omega * y * y / 2.0)
}

/// `√(qᵀq + ε pᵀp)`.
pub fn energy_norm(q: &DVector<f64>, p: &DVector<f64>, epsilon: f64) -> Result<f64> {
    if q.len() != p.len() {
        return Err(dim_err("position and momentum lengths differ"));
    }
    Ok((q.norm_squared() + epsilon * p.norm_squared()).sqrt())
}

/// Least-squares slope of `log y` against `log x`; `None` when fewer than
/// two points or any value is non-positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite())
    {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// On-disk store of reference checkpoint states, keyed by a caller-chosen
/// string such as `diag1d-eps1e-4-h1e-6-T10`.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CachedStates {
    d_fast: usize,
    d_slow: usize,
    flat: Vec<Vec<f64>>,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::Cache(format!("{}: {e}", dir.display())))?;
        Ok(ReferenceCache { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        let clean: String = key
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.dir.join(format!("{clean}.json"))
    }

    pub fn get(&self, key: &str) -> Option<Vec<PhaseState>> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        let c: CachedStates = serde_json::from_str(&text).ok()?;
        c.flat
            .into_iter()
            .map(|x| PhaseState::from_flat(c.d_fast, c.d_slow, &DVector::from_vec(x)).ok())
            .collect()
    }

    pub fn put(&self, key: &str, states: &[PhaseState]) -> Result<()> {
        let (d_fast, d_slow) = states.first().map_or((0, 0), |s| (s.d_fast(), s.d_slow()));
        let flat = states
            .iter()
            .map(|s| s.to_flat().as_slice().to_vec())
            .collect();
        let text = serde_json::to_string(&CachedStates {
            d_fast,
            d_slow,
            flat,
        })
        .map_err(|e| Error::Cache(e.to_string()))?;
        std::fs::write(self.path(key), text).map_err(|e| Error::Cache(e.to_string()))
    }

    pub fn get_or_compute(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<Vec<PhaseState>>,
    ) -> Result<Vec<PhaseState>> {
        if let Some(s) = self.get(key) {
            return Ok(s);
        }
        let s = compute()?;
        self.put(key, &s)?;
        Ok(s)
    }
}

/// Coarse-integrator settings for a convergence study and the micro step
/// of its reference, `h_ref = reference_factor · √ε`.
#[derive(Debug, Clone)]
pub struct ConvergenceSettings {
    pub backend: Backend,
    pub n: u32,
    pub reference_factor: f64,
    pub cache: Option<(ReferenceCache, String)>,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        ConvergenceSettings {
            backend: Backend::Symplectic,
            n: 10,
            reference_factor: 0.01,
            cache: None,
        }
    }
}

/// Errors against a full-system Verlet reference, indexed
/// `[epsilon][step size]`. Position, energy-norm and momentum errors are
/// maxima over the checkpoint times; see [`convergence_study`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub step_sizes: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Spacing of the checkpoints the errors are maximised over.
    pub checkpoint_spacing: f64,
    pub position_errors: Vec<Vec<f64>>,
    pub energy_norm_errors: Vec<Vec<f64>>,
    pub momentum_errors: Vec<Vec<f64>>,
    /// `‖q(T) − q_ref(T)‖₂` at the final time only.
    pub endpoint_position_errors: Vec<Vec<f64>>,
    /// Log-log slope of the position error per epsilon; `None` if undefined.
    pub slopes: Vec<Option<f64>>,
    /// `max_H error/H` per epsilon.
    pub constants: Vec<f64>,
}

impl ConvergenceReport {
    /// Slope fitted to all epsilons' errors together.
    pub fn pooled_slope(&self) -> Option<f64> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for row in &self.position_errors {
            x.extend_from_slice(&self.step_sizes);
            y.extend_from_slice(row);
        }
        log_log_slope(&x, &y)
    }
}

fn divides(step: f64, span: f64) -> bool {
    let r = span / step;
    step > 0.0 && (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

/// Global error of the coarse integrator for every `(ε, H)` pair, maximised
/// over checkpoints at multiples of the largest `H` (or only at `T` when
/// some step does not divide the largest). `make(ε)` builds the system and
/// initial state. Each `H` must divide `T`.
pub fn convergence_study<F>(
    make: F,
    step_sizes: &[f64],
    epsilons: &[f64],
    total_time: f64,
    settings: &ConvergenceSettings,
) -> Result<ConvergenceReport>
where
    F: Fn(f64) -> Result<(QuasiQuadraticSystem, PhaseState)> + Sync + Send,
{
    for &h in step_sizes {
        if !divides(h, total_time) {
            return Err(Error::InvalidParameter(format!(
                "step {h} does not divide T = {total_time}"
            )));
        }
    }
    let h_max = step_sizes.iter().cloned().fold(0.0, f64::max);
    let spacing = if step_sizes.iter().all(|&h| divides(h, h_max)) {
        h_max
    } else {
        total_time
    };
    let checkpoints = (total_time / spacing).round() as usize;

    let references = par_map(epsilons, |&eps| -> Result<Vec<PhaseState>> {
        let (sys, s0) = make(eps)?;
        let h_ref = settings.reference_factor * eps.sqrt();
        let run = || {
            let mut out = Vec::with_capacity(checkpoints + 1);
            let mut s = s0.clone();
            out.push(s.clone());
            for _ in 0..checkpoints {
                s = fine_verlet_flow(&sys, &s, h_ref, spacing, VerletMode::Full)?;
                out.push(s.clone());
            }
            Ok(out)
        };
        match &settings.cache {
            Some((cache, tag)) => cache.get_or_compute(
                &format!("{tag}-eps{eps:e}-h{h_ref:e}-T{total_time}-every{spacing}"),
                run,
            ),
            None => run(),
        }
    });
    let references = references.into_iter().collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..epsilons.len())
        .flat_map(|e| (0..step_sizes.len()).map(move |h| (e, h)))
        .collect();
    let results = par_map(&pairs, |&(ei, hi)| -> Result<[f64; 4]> {
        let eps = epsilons[ei];
        let (sys, s0) = make(eps)?;
        let cfg = StepperConfig::new(step_sizes[hi], settings.n, settings.backend, total_time)?;
        let traj = simulate(&sys, &s0, &cfg).map_err(|a| a.error)?;
        let stride = (spacing / step_sizes[hi]).round() as usize;
        let mut worst = [0.0f64; 4];
        for (k, r) in references[ei].iter().enumerate() {
            let s = &traj.states[k * stride];
            let dq = s.positions() - r.positions();
            let dp = s.momenta() - r.momenta();
            worst[0] = worst[0].max(dq.norm());
            worst[1] = worst[1].max(energy_norm(&dq, &dp, eps)?);
            worst[2] = worst[2].max(dp.norm());
            worst[3] = dq.norm();
        }
        Ok(worst)
    });
    let rows = || vec![Vec::new(); epsilons.len()];
    let mut report = ConvergenceReport {
        step_sizes: step_sizes.to_vec(),
        epsilons: epsilons.to_vec(),
        checkpoint_spacing: spacing,
        position_errors: rows(),
        energy_norm_errors: rows(),
        momentum_errors: rows(),
        endpoint_position_errors: rows(),
        slopes: Vec::new(),
        constants: Vec::new(),
    };
    for (&(ei, _), r) in pairs.iter().zip(results) {
        let [q, en, p, end] = r?;
        report.position_errors[ei].push(q);
        report.energy_norm_errors[ei].push(en);
        report.momentum_errors[ei].push(p);
        report.endpoint_position_errors[ei].push(end);
    }
    for errs in &report.position_errors {
        report.slopes.push(log_log_slope(step_sizes, errs));
        report.constants.push(
            errs.iter()
                .zip(step_sizes)
                .map(|(e, h)| e / h)
                .fold(0.0, f64::max),
        );
    }
    Ok(report)
}

/// `start, start + step, …` up to `stop` inclusive (within roundoff).
pub fn step_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start > 0.0 && step > 0.0 && stop >= start) {
        return Err(Error::InvalidParameter(format!(
            "bad grid {start}:{step}:{stop}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Ratio `x_method / x_bench` of the first slow coordinate at the end of
/// each run, per coarse step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceReport {
    pub grid: Vec<f64>,
    /// `⌈T/H⌉·H`, the time both sides are compared at.
    pub end_times: Vec<f64>,
    pub ratios: Vec<f64>,
    pub benchmark: Vec<f64>,
    /// Runs that failed or blew up; their ratio is NaN.
    pub diverged: Vec<bool>,
}

impl ResonanceReport {
    /// Indices with `|ratio − 1| > threshold`, diverged points included.
    pub fn resonant(&self, threshold: f64) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&i| self.diverged[i] || (self.ratios[i] - 1.0).abs() > threshold)
            .collect()
    }
}

/// Coarse integrator versus a micro-step Verlet benchmark across a grid of
/// coarse steps. A run that fails is recorded as diverged rather than
/// aborting the scan.
pub fn resonance_scan(
    system: &QuasiQuadraticSystem,
    state0: &PhaseState,
    grid: &[f64],
    total_time: f64,
    bench_h: f64,
    backend: Backend,
    n: u32,
) -> Result<ResonanceReport> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || !(grid[0] > 0.0) {
        return Err(Error::InvalidParameter(
            "resonance grid must be positive and strictly increasing".into(),
        ));
    }
    if state0.d_slow() == 0 {
        return Err(dim_err("resonance scan compares the first slow coordinate"));
    }
    let end_times: Vec<f64> = grid
        .iter()
        .map(|&h| (total_time / h - 1e-9).ceil().max(1.0) * h)
        .collect();

    // Benchmark at every end time, in increasing order, one segment at a time.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| end_times[a].total_cmp(&end_times[b]));
    let mut benchmark = vec![0.0; grid.len()];
    let (mut t, mut s) = (0.0, state0.clone());
    for &i in &order {
        s = fine_verlet_flow(system, &s, bench_h, end_times[i] - t, VerletMode::Full)?;
        t = end_times[i];
        benchmark[i] = s.q_slow[0];
    }

    let idx: Vec<usize> = (0..grid.len()).collect();
    let runs = par_map(&idx, |&i| -> Option<f64> {
        let cfg = StepperConfig::new(grid[i], n, backend, total_time).ok()?;
        let traj = simulate(system, state0, &cfg).ok()?;
        let x = traj.last()?.q_slow[0];
        (x.is_finite() && x.abs() < 1e6).then_some(x)
    });
    let diverged: Vec<bool> = runs.iter().map(Option::is_none).collect();
    let ratios = runs
        .iter()
        .zip(&benchmark)
        .map(|(x, b)| x.map_or(f64::NAN, |x| x / b))
        .collect();
    Ok(ResonanceReport {
        grid: grid.to_vec(),
        end_times,
        ratios,
        benchmark,
        diverged,
    })
}

/// Floating-point operations of `mult_count` products of `2d_f × 2d_f`
/// matrices (`2m³` each).
pub fn symplectic_flops(d_fast: usize, mult_count: u64) -> f64 {
    let m = 2.0 * d_fast as f64;
    mult_count as f64 * 2.0 * m * m * m
}

/// Operation budget of the dense diagonalization path for one triple:
/// a symmetric eigendecomposition with vectors (`9d³`), the two conjugated
/// rotation flows (`24d³`), and per slow variable the modal transform,
/// back-transform and `F₂S` product (`36d³`).
pub fn diagonalization_flops(d_fast: usize, d_slow: usize) -> f64 {
    let d3 = (d_fast as f64).powi(3);
    9.0 * d3 + 24.0 * d3 + 36.0 * d_slow as f64 * d3
}

/// One line of [`verify_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

/// Structural identities of the exponential triples, the integrator's
/// symplecticity and the Taylor counterexample, on small fixed problems.
pub fn verify_suite() -> Result<Vec<Check>> {
    use crate::expm::{structure_residuals, symplectic_expm, verlet_seed};
    use crate::integrator::step;
    use crate::linalg::canonical_j;
    use crate::oracles::expm_taylor_squaring;
    use crate::scenarios::{diag1d, nondiag3d};

    let mut out = Vec::new();
    let k = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.1, 0.5, 2.0, -0.3, 0.1, -0.3, 1.5]);
    let dk = vec![
        DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, -0.5, 0.1, 0.0, 0.1, 0.3]),
        DMatrix::identity(3, 3),
    ];
    let eps = 1e-3;
    let seed = verlet_seed(&k, &dk, eps, 0.1 / 1024.0)?;
    let j = canonical_j(3);
    out.push(Check::at_most(
        "seed A symplectic",
        max_abs(&(seed.a.transpose() * &j * &seed.a - &j)),
        1e-10,
    ));
    out.push(Check::at_most(
        "seed C symplectic",
        max_abs(&(seed.c.transpose() * &j * &seed.c - &j)),
        1e-10,
    ));
    out.push(Check::at_most(
        "seed AᵀC = I",
        max_abs(&(seed.a.transpose() * &seed.c - DMatrix::identity(6, 6))),
        1e-10,
    ));
    let t = symplectic_expm(&k, &dk, eps, 0.1, 10)?;
    let (f3, f2, rev, sym) = structure_residuals(&t);
    out.push(Check::at_most("F3 symplectic", f3, 1e-10));
    out.push(Check::at_most("F2 symplectic", f2, 1e-10));
    out.push(Check::at_most("F2ᵀF3 = I", rev, 1e-10));
    out.push(Check::at_most("F3ᵀG2 symmetric", sym, 1e-10));

    // G2 = −J ∂F3 by central differences in each slow direction.
    let d = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..dk.len() {
        let fp = symplectic_expm(&(&k + &dk[i] * d), &dk, eps, 0.1, 10)?.f3;
        let fm = symplectic_expm(&(&k - &dk[i] * d), &dk, eps, 0.1, 10)?.f3;
        let dfd = (fp - fm) / (2.0 * d);
        worst = worst.max(max_abs(&(&t.g2[i] + &j * dfd)) / max_abs(&t.g2[i]));
    }
    out.push(Check::at_most("G2 = −J∂F3 (relative)", worst, 1e-5));

    for (name, sc) in [("diag1d", diag1d(100.0)?), ("nondiag3d", nondiag3d(100.0)?)] {
        let cfg = StepperConfig::new(0.1, 10, Backend::Symplectic, 0.1)?;
        let jac = jacobian_fd(|s| step(&sc.system, s, &cfg), &sc.initial, DEFAULT_FD_DELTA)?;
        let form = SymplecticForm::split(sc.system.d_fast(), sc.system.d_slow());
        out.push(Check::at_most(
            &format!("{name} step symplectic"),
            symplectic_residual(&jac, &form)?,
            1e-6,
        ));
    }

    let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let taylor = symplectic_residual(&expm_taylor_squaring(&x, 10), &SymplecticForm::canonical(1))?;
    let sympl = symplectic_expm(&DMatrix::identity(1, 1), &[], 1.0, 1.0, 10)?;
    let sres = symplectic_residual(&sympl.f3, &SymplecticForm::canonical(1))?;
    out.push(Check::at_least(
        "Taylor / symplectic residual",
        taylor / sres.max(f64::EPSILON),
        1e3,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::diag1d;

    #[test]
    fn residual_of_identity_and_rotation() {
        let f = SymplecticForm::canonical(1);
        assert_eq!(
            symplectic_residual(&DMatrix::identity(2, 2), &f).unwrap(),
            0.0
        );
        let (s, c) = 0.7_f64.sin_cos();
        let r = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
        assert!(symplectic_residual(&r, &f).unwrap() <= 1e-15);
    }

    #[test]
    fn residual_of_stretch() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0 + 1e-3, 0.0, 0.0, 1.0]);
        let r = symplectic_residual(&a, &SymplecticForm::canonical(1)).unwrap();
        assert!((r - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn residual_rejects_odd_dimension() {
        assert!(
            symplectic_residual(&DMatrix::identity(3, 3), &SymplecticForm::canonical(1)).is_err()
        );
    }

    #[test]
    fn jacobian_of_identity_and_linear_maps() {
        let s = PhaseState::new(
            DVector::from_vec(vec![0.1, 0.2]),
            DVector::from_vec(vec![0.3, 0.4]),
            DVector::from_vec(vec![0.5]),
            DVector::from_vec(vec![0.6]),
        )
        .unwrap();
        let id = jacobian_fd(|x| Ok(x.clone()), &s, 1e-6).unwrap();
        assert!(max_abs(&(id - DMatrix::identity(6, 6))) <= 1e-10);
        let m = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let mm = m.clone();
        let lin = jacobian_fd(
            move |x| PhaseState::from_flat(2, 1, &(&mm * x.to_flat())),
            &s,
            1e-3,
        )
        .unwrap();
        assert!(max_abs(&(lin - m)) <= 1e-12);
    }

    #[test]
    fn invariant_by_substitution() {
        let omega = 100.0;
        let s = PhaseState::new(
            DVector::zeros(1),
            DVector::zeros(1),
            DVector::from_element(1, 0.3),
            DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(adiabatic_invariant_ex1(&s, omega).unwrap(), 0.0);
        let s = PhaseState::new(
            DVector::from_element(1, 1.0 / omega),
            DVector::zeros(1),
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .unwrap();
        assert!((adiabatic_invariant_ex1(&s, omega).unwrap() - 0.5).abs() < 1e-15);
        assert!(adiabatic_invariant_ex1(&PhaseState::zeros(2, 1), omega).is_err());
    }

    #[test]
    fn energy_norm_cases() {
        let z = DVector::zeros(2);
        assert_eq!(energy_norm(&z, &z, 0.01).unwrap(), 0.0);
        assert_eq!(
            energy_norm(&DVector::from_vec(vec![1.0, 0.0]), &z, 0.01).unwrap(),
            1.0
        );
        let p = DVector::from_vec(vec![10.0, 0.0]);
        assert!((energy_norm(&z, &p, 0.01).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slope_fit() {
        let h = [0.2, 0.1, 0.05];
        assert!((log_log_slope(&h, &[0.4, 0.2, 0.1]).unwrap() - 1.0).abs() < 1e-12);
        assert!((log_log_slope(&h, &[0.04, 0.01, 0.0025]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(log_log_slope(&h, &[0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn zero_dynamics_gives_zero_errors_and_no_slope() {
        let make = |eps: f64| {
            let sys = QuasiQuadraticSystem::constant_stiffness(DMatrix::identity(1, 1), 1, eps)?;
            Ok((sys, PhaseState::zeros(1, 1)))
        };
        let r = convergence_study(
            make,
            &[0.2, 0.1],
            &[1e-2],
            1.0,
            &ConvergenceSettings::default(),
        )
        .unwrap();
        assert_eq!(r.position_errors, vec![vec![0.0, 0.0]]);
        assert_eq!(r.slopes, vec![None]);
    }

    #[test]
    fn convergence_requires_dividing_steps() {
        let make = |eps: f64| {
            Ok((
                QuasiQuadraticSystem::constant_stiffness(DMatrix::identity(1, 1), 1, eps)?,
                PhaseState::zeros(1, 1),
            ))
        };
        assert!(
            convergence_study(make, &[0.3], &[1e-2], 1.0, &ConvergenceSettings::default()).is_err()
        );
    }

    #[test]
    fn grid_is_inclusive() {
        let g = step_grid(0.001, 0.2, 0.001).unwrap();
        assert_eq!(g.len(), 200);
        assert!((g[199] - 0.2).abs() < 1e-12);
        assert!(step_grid(0.1, 0.05, 0.01).is_err());
    }

    #[test]
    fn single_point_scan_matches_simulate() {
        let sc = diag1d(20.0).unwrap();
        let r = resonance_scan(
            &sc.system,
            &sc.initial,
            &[0.05],
            1.0,
            0.01 / 20.0,
            Backend::Symplectic,
            8,
        )
        .unwrap();
        let cfg = StepperConfig::new(0.05, 8, Backend::Symplectic, 1.0).unwrap();
        let x = simulate(&sc.system, &sc.initial, &cfg)
            .unwrap()
            .last()
            .unwrap()
            .q_slow[0];
        let bench = fine_verlet_flow(&sc.system, &sc.initial, 0.01 / 20.0, 1.0, VerletMode::Full)
            .unwrap()
            .q_slow[0];
        assert!((r.ratios[0] - x / bench).abs() < 1e-12);
    }

    #[test]
    fn scan_rejects_unsorted_grid() {
        let sc = diag1d(20.0).unwrap();
        assert!(resonance_scan(
            &sc.system,
            &sc.initial,
            &[0.1, 0.05],
            1.0,
            1e-3,
            Backend::Symplectic,
            8
        )
        .is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReferenceCache::new(dir.path()).unwrap();
        let s = vec![diag1d(10.0).unwrap().initial, diag1d(20.0).unwrap().initial];
        assert!(cache.get("a/b").is_none());
        let got = cache.get_or_compute("a/b", || Ok(s.clone())).unwrap();
        assert_eq!(got, s);
        let again = cache
            .get_or_compute("a/b", || Err(Error::Cache("not called".into())))
            .unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn flop_models() {
        assert_eq!(symplectic_flops(1, 1), 16.0);
        assert_eq!(diagonalization_flops(1, 1), 69.0);
    }

    #[test]
    fn verify_suite_passes() {
        for c in verify_suite().unwrap() {
            assert!(c.pass, "{} = {:e} vs {:e}", c.name, c.value, c.threshold);
        }
    }
}
