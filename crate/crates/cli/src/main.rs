use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use multiscale_core::diagnostics::{
    convergence_study, diagonalization_flops, resonance_scan, step_grid, symplectic_flops,
    symplectic_residual, verify_suite, ConvergenceSettings, ReferenceCache, RESONANCE_THRESHOLD,
};
use multiscale_core::integrator::{simulate_scenario, Trajectory};
use multiscale_core::oracles::max_stable_micro_step;
use multiscale_core::scenarios::{custom, diag1d, nondiag3d, toeplitz, CustomSpec};
use multiscale_core::{
    Backend, Error, Scenario, ScenarioKind, Stepper, StepperConfig, SymplecticForm,
};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "multiscale",
    version,
    about = "Symplectic multiscale integration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write its trajectory.
    #[command(allow_negative_numbers = true)]
    Simulate(Opts),
    /// Position, energy-norm and momentum errors against a fine reference.
    #[command(allow_negative_numbers = true)]
    Converge(Opts),
    /// Ratio of the final slow position to a fine benchmark across coarse steps.
    #[command(allow_negative_numbers = true)]
    Resonance(Opts),
    /// Time one coarse step per exponentiation backend.
    #[command(allow_negative_numbers = true)]
    ExpmBench(Opts),
    /// Run the structural self-checks.
    #[command(allow_negative_numbers = true)]
    Verify(Opts),
}

/// Every option can also come from the `--config` TOML file; flags win.
#[derive(Args, Deserialize, Default, Debug, Clone)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct Opts {
    /// TOML file with any of these options (keys as the long flag names).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// diag1d, nondiag3d, toeplitz or custom-file.
    #[arg(long)]
    scenario: Option<String>,
    /// Fast frequency scale; epsilon = omega⁻².
    #[arg(long)]
    omega: Option<f64>,
    /// Coarse step.
    #[arg(long = "H")]
    #[serde(rename = "H")]
    big_h: Option<f64>,
    /// Total time.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    total_time: Option<f64>,
    /// Squaring depth.
    #[arg(long)]
    n: Option<u32>,
    /// symplectic, iterative, diag, expm-taylor or fine-verlet.
    #[arg(long)]
    backend: Option<String>,
    /// Micro step of the fine-verlet backend (default: a fifth of the stability limit).
    #[arg(long)]
    h_micro: Option<f64>,
    /// Fast dimension of the toeplitz scenario.
    #[arg(long)]
    df: Option<usize>,
    /// Seed of the toeplitz initial condition.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario description for custom-file.
    #[arg(long)]
    custom_file: Option<PathBuf>,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Benchmark micro step for resonance (default 0.01/omega).
    #[arg(long)]
    bench_h: Option<f64>,
    #[arg(long)]
    grid_start: Option<f64>,
    #[arg(long)]
    grid_stop: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
    /// Comma-separated backends for expm-bench.
    #[arg(long)]
    backends: Option<String>,
    /// Comma-separated coarse steps for converge.
    #[arg(long)]
    steps: Option<String>,
    /// Comma-separated omegas for converge.
    #[arg(long)]
    omegas: Option<String>,
    /// Directory for cached reference runs.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Repetitions per backend in expm-bench.
    #[arg(long)]
    reps: Option<usize>,
}

macro_rules! merge {
    ($a:ident, $b:ident; $($f:ident),*) => { Opts { config: None, $($f: $a.$f.or($b.$f)),* } };
}

impl Opts {
    fn resolve(self) -> Result<Opts, Failure> {
        let Some(path) = &self.config else {
            return Ok(self);
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let file: Opts =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let flags = self;
        Ok(
            merge!(flags, file; scenario, omega, big_h, total_time, n, backend, h_micro, df, seed, custom_file,
            out, bench_h, grid_start, grid_stop, grid_step, backends, steps, omegas, cache_dir, reps),
        )
    }

    fn omega(&self) -> f64 {
        self.omega.unwrap_or(100.0)
    }
}

/// A failed command: usage problems exit 2, numerical failures exit 1.
enum Failure {
    Usage(String),
    Numerical(Error),
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(m) => Failure::Usage(m),
            Error::Dimension(m) => Failure::Usage(format!("dimension mismatch: {m}")),
            other => Failure::Numerical(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("output: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(format!("output: {e}"))
    }
}

/// Shortest round-trip text, in exponent form for very small or large magnitudes.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| usage(format!("{what}: '{x}': {e}")))
        })
        .collect()
}

fn build_scenario(o: &Opts, omega: f64) -> Result<Scenario, Failure> {
    let name = o.scenario.as_deref().unwrap_or("diag1d");
    let kind: ScenarioKind = name.parse().map_err(|e: Error| usage(e.to_string()))?;
    Ok(match kind {
        ScenarioKind::Diag1d => diag1d(omega)?,
        ScenarioKind::Nondiag3d => nondiag3d(omega)?,
        ScenarioKind::Toeplitz => toeplitz(omega, o.df.unwrap_or(100), o.seed.unwrap_or(0))?,
        ScenarioKind::Custom => {
            let path = o
                .custom_file
                .as_ref()
                .ok_or_else(|| usage("custom-file scenario needs --custom-file"))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let spec: CustomSpec =
                toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            custom(&spec)?
        }
    })
}

fn backend(o: &Opts, name: &str, sc: &Scenario) -> Result<Backend, Failure> {
    let h_micro = match o.h_micro {
        Some(h) => h,
        None if name == "fine-verlet" => {
            max_stable_micro_step(&sc.system, &sc.initial.q_slow)? / 5.0
        }
        None => 0.0,
    };
    Ok(Backend::parse(name, h_micro)?)
}

fn output(o: &Opts) -> Result<csv::Writer<Box<dyn Write>>, Failure> {
    let sink: Box<dyn Write> = match &o.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink))
}

fn write_trajectory(o: &Opts, traj: &Trajectory) -> Result<(), Failure> {
    let mut w = output(o)?;
    let (df, ds) = traj
        .states
        .first()
        .map_or((0, 0), |s| (s.d_fast(), s.d_slow()));
    let mut header = vec!["t".to_string()];
    for (name, d) in [
        ("q_fast", df),
        ("p_fast", df),
        ("q_slow", ds),
        ("p_slow", ds),
    ] {
        header.extend((0..d).map(|i| format!("{name}[{i}]")));
    }
    header.extend(["energy", "adiabatic_invariant", "mult_count"].map(String::from));
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let s = &traj.states[k];
        let mut row = vec![num(traj.times[k])];
        row.extend(s.to_flat().iter().map(|&x| num(x)));
        row.push(num(traj.energy[k]));
        row.push(traj.adiabatic_invariant[k].map_or(String::new(), num));
        row.push(traj.mult_count[k].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(o: Opts) -> Result<(), Failure> {
    let sc = build_scenario(&o, o.omega())?;
    let b = backend(&o, o.backend.as_deref().unwrap_or("symplectic"), &sc)?;
    let cfg = StepperConfig::new(
        o.big_h.unwrap_or(0.1),
        o.n.unwrap_or(10),
        b,
        o.total_time.unwrap_or(10.0),
    )?;
    match simulate_scenario(&sc, &cfg) {
        Ok(traj) => write_trajectory(&o, &traj),
        Err(aborted) => {
            write_trajectory(&o, &aborted.partial)?;
            Err(aborted.error.into())
        }
    }
}

fn converge(o: Opts) -> Result<(), Failure> {
    let steps = parse_list(o.steps.as_deref().unwrap_or("0.2,0.1,0.05,0.025"), "steps")?;
    let omegas = parse_list(o.omegas.as_deref().unwrap_or("100,1000"), "omegas")?;
    let eps: Vec<f64> = omegas.iter().map(|w| w.powi(-2)).collect();
    let name = o.backend.clone().unwrap_or_else(|| "symplectic".into());
    if name == "fine-verlet" {
        return Err(usage(
            "converge compares against fine Verlet; pick a coarse backend",
        ));
    }
    let b = Backend::parse(&name, 0.0)?;
    let cache = match &o.cache_dir {
        Some(dir) => Some((
            ReferenceCache::new(dir)?,
            o.scenario.clone().unwrap_or_else(|| "diag1d".into()),
        )),
        None => None,
    };
    let settings = ConvergenceSettings {
        backend: b,
        n: o.n.unwrap_or(16),
        cache,
        ..Default::default()
    };
    let make = |e: f64| -> multiscale_core::Result<_> {
        let sc = build_scenario(&o, e.powf(-0.5)).map_err(|f| match f {
            Failure::Usage(m) => Error::InvalidParameter(m),
            Failure::Numerical(e) => e,
        })?;
        Ok((sc.system, sc.initial))
    };
    let rep = convergence_study(make, &steps, &eps, o.total_time.unwrap_or(10.0), &settings)?;
    let mut w = output(&o)?;
    w.write_record([
        "epsilon",
        "H",
        "position_error",
        "energy_norm_error",
        "momentum_error",
        "endpoint_position_error",
    ])?;
    for (ei, e) in eps.iter().enumerate() {
        for (hi, h) in steps.iter().enumerate() {
            w.write_record([
                num(*e),
                num(*h),
                num(rep.position_errors[ei][hi]),
                num(rep.energy_norm_errors[ei][hi]),
                num(rep.momentum_errors[ei][hi]),
                num(rep.endpoint_position_errors[ei][hi]),
            ])?;
        }
    }
    w.flush()?;
    for (ei, e) in eps.iter().enumerate() {
        let slope = rep.slopes[ei].map_or("undefined".to_string(), |s| format!("{s:.3}"));
        eprintln!(
            "epsilon {e:e}: slope {slope}, constant {:.4}",
            rep.constants[ei]
        );
    }
    Ok(())
}

fn resonance(o: Opts) -> Result<(), Failure> {
    let omega = o.omega();
    let sc = build_scenario(&o, omega)?;
    let grid = step_grid(
        o.grid_start.unwrap_or(0.001),
        o.grid_stop.unwrap_or(0.2),
        o.grid_step.unwrap_or(0.001),
    )?;
    let b = backend(&o, o.backend.as_deref().unwrap_or("symplectic"), &sc)?;
    let rep = resonance_scan(
        &sc.system,
        &sc.initial,
        &grid,
        o.total_time.unwrap_or(100.0),
        o.bench_h.unwrap_or(0.01 / omega),
        b,
        o.n.unwrap_or(10),
    )?;
    let mut w = output(&o)?;
    w.write_record([
        "H",
        "end_time",
        "ratio",
        "benchmark",
        "diverged",
        "resonant",
    ])?;
    for (i, h) in grid.iter().enumerate() {
        let resonant = rep.diverged[i] || (rep.ratios[i] - 1.0).abs() > RESONANCE_THRESHOLD;
        w.write_record([
            num(*h),
            num(rep.end_times[i]),
            num(rep.ratios[i]),
            num(rep.benchmark[i]),
            rep.diverged[i].to_string(),
            resonant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn expm_bench(o: Opts) -> Result<(), Failure> {
    let sc = build_scenario(&o, o.omega.unwrap_or(1000.0))?;
    let (h, n, reps) = (
        o.big_h.unwrap_or(0.1),
        o.n.unwrap_or(10),
        o.reps.unwrap_or(3).max(1),
    );
    let names = o
        .backends
        .clone()
        .unwrap_or_else(|| "symplectic,expm-taylor,diag".into());
    let mut w = output(&o)?;
    w.write_record([
        "backend",
        "d_fast",
        "n",
        "seconds_per_step",
        "mult_count",
        "flops_estimate",
        "f3_symplectic_residual",
    ])?;
    let (df, ds) = (sc.system.d_fast(), sc.system.d_slow());
    for name in names.split(',').map(str::trim) {
        if name == "fine-verlet" {
            return Err(usage("fine-verlet has no exponential to benchmark"));
        }
        let b = backend(&o, name, &sc)?;
        let mut stepper = Stepper::new(sc.system.clone(), StepperConfig::new(h, n, b, h)?)?;
        // the first step of the iterative backend also builds its seed
        stepper.step(&sc.initial)?;
        let mut times = Vec::with_capacity(reps);
        let mut last = None;
        for _ in 0..reps {
            let start = Instant::now();
            let out = stepper.step(&sc.initial)?;
            times.push(start.elapsed().as_secs_f64());
            last = Some(out);
        }
        times.sort_by(f64::total_cmp);
        let out = last.expect("at least one repetition");
        let residual = match &out.triple {
            Some(t) => num(symplectic_residual(&t.f3, &SymplecticForm::canonical(df))?),
            None => String::new(),
        };
        let flops = match b {
            Backend::Diagonalization => diagonalization_flops(df, ds),
            _ => symplectic_flops(df, out.mult_count),
        };
        w.write_record([
            b.name().to_string(),
            df.to_string(),
            n.to_string(),
            num(times[times.len() / 2]),
            out.mult_count.to_string(),
            num(flops),
            residual,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn verify(o: Opts) -> Result<bool, Failure> {
    let checks = verify_suite()?;
    let mut w = output(&o)?;
    w.write_record(["check", "value", "threshold", "pass"])?;
    for c in &checks {
        w.write_record([
            c.name.clone(),
            num(c.value),
            num(c.threshold),
            c.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(checks.iter().all(|c| c.pass))
}

fn report(e: &Failure, out: Option<&Path>) {
    let (kind, msg) = match e {
        Failure::Usage(m) => ("usage", m.clone()),
        Failure::Numerical(err) => (err.kind(), err.to_string()),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(std::io::stderr());
    let _ = w.write_record(["error", kind, &msg]);
    let _ = w.flush();
    if let (Failure::Numerical(_), Some(p)) = (e, out) {
        eprintln!("partial output kept in {}", p.display());
    }
}

type Handler = fn(Opts) -> Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, run): (Opts, Handler) = match cli.command {
        Command::Simulate(o) => (o, |o| simulate(o).map(|_| true)),
        Command::Converge(o) => (o, |o| converge(o).map(|_| true)),
        Command::Resonance(o) => (o, |o| resonance(o).map(|_| true)),
        Command::ExpmBench(o) => (o, |o| expm_bench(o).map(|_| true)),
        Command::Verify(o) => (o, verify),
    };
    let opts = match opts.resolve() {
        Ok(o) => o,
        Err(e) => {
            report(&e, None);
            return ExitCode::from(2);
        }
    };
    let out = opts.out.clone();
    match run(opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            report(&e, out.as_deref());
            ExitCode::from(match e {
                Failure::Usage(_) => 2,
                Failure::Numerical(_) => 1,
            })
        }
    }
}
