use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multiscale"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn simulate_writes_schema_and_one_row_per_step() {
    let o = run(&[
        "simulate",
        "--scenario",
        "diag1d",
        "--omega",
        "100",
        "--H",
        "0.1",
        "--T",
        "1",
        "--n",
        "10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(
        r[0],
        [
            "t",
            "q_fast[0]",
            "p_fast[0]",
            "q_slow[0]",
            "p_slow[0]",
            "energy",
            "adiabatic_invariant",
            "mult_count"
        ]
    );
    assert_eq!(r.len(), 1 + 11);
    assert_eq!(r[1][7], "0");
    assert!(r[1..]
        .iter()
        .all(|row| row.len() == 8 && !row[6].is_empty()));
    assert!(r[2..].iter().all(|row| row[7] == "40"));
}

#[test]
fn invariant_column_blank_when_undefined() {
    let o = run(&[
        "simulate",
        "--scenario",
        "nondiag3d",
        "--H",
        "0.1",
        "--T",
        "0.3",
    ]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    assert_eq!(r[0].len(), 1 + 2 * 2 + 2 + 3);
    assert!(r[1..].iter().all(|row| row[row.len() - 2].is_empty()));
}

#[test]
fn seeded_runs_are_bit_identical() {
    let args = [
        "simulate",
        "--scenario",
        "toeplitz",
        "--df",
        "6",
        "--omega",
        "50",
        "--H",
        "0.1",
        "--T",
        "0.5",
        "--seed",
        "3",
    ];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = run(&[
        "simulate",
        "--scenario",
        "toeplitz",
        "--df",
        "6",
        "--omega",
        "50",
        "--H",
        "0.1",
        "--T",
        "0.5",
        "--seed",
        "4",
    ]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn config_file_fills_gaps_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "scenario = \"diag1d\"\nomega = 50.0\nH = 0.2\nT = 1.0\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_file = rows(&stdout(&run(&["simulate", "--config", cfg])));
    assert_eq!(from_file.len(), 1 + 6);
    let overridden = rows(&stdout(&run(&["simulate", "--config", cfg, "--H", "0.1"])));
    assert_eq!(overridden.len(), 1 + 11);
}

#[test]
fn output_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = run(&["simulate", "--T", "0.2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
    assert_eq!(
        std::fs::read_to_string(&out).unwrap().lines().count(),
        1 + 3
    );
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["simulate", "--backend", "nope"],
        vec!["simulate", "--scenario", "moon"],
        vec!["simulate", "--H", "-1"],
        vec!["simulate", "--scenario", "custom-file"],
        vec!["simulate", "--unknown-flag"],
        vec!["expm-bench", "--backends", "fine-verlet"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "omgea = 3.0\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error,usage,"));
}

fn losing_stiffness_spec(dir: &Path) -> String {
    // K = 1 − q_slow becomes indefinite once the slow variable drifts past 1
    let p = dir.join("custom.toml");
    std::fs::write(
        &p,
        "epsilon = 0.01\nk0 = [[1.0]]\nk_slope = [[[-1.0]]]\nq_fast = [0.01]\nq_slow = [0.0]\np_slow = [1.0]\n",
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn numerical_failure_exits_one_with_error_row_and_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let spec = losing_stiffness_spec(dir.path());
    let o = run(&[
        "simulate",
        "--scenario",
        "custom-file",
        "--custom-file",
        &spec,
        "--backend",
        "diag",
        "--H",
        "0.1",
        "--T",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("error,not_positive_definite,"),
        "{}",
        stderr(&o)
    );
    let r = rows(&stdout(&o));
    assert!(r.len() > 2 && r.len() < 1 + 31);
}

#[test]
fn verify_passes() {
    let o = run(&["verify"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    assert_eq!(r[0], ["check", "value", "threshold", "pass"]);
    assert!(r[1..].iter().all(|row| row[3] == "true"));
}

#[test]
fn resonance_small_grid() {
    let o = run(&[
        "resonance",
        "--omega",
        "20",
        "--T",
        "1",
        "--grid-start",
        "0.01",
        "--grid-stop",
        "0.03",
        "--grid-step",
        "0.01",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(
        r[0],
        [
            "H",
            "end_time",
            "ratio",
            "benchmark",
            "diverged",
            "resonant"
        ]
    );
    assert_eq!(r.len(), 4);
    let ratio: f64 = r[1][2].parse().unwrap();
    assert!((ratio - 1.0).abs() < 0.05);
}

#[test]
fn converge_reports_every_pair() {
    let o = run(&[
        "converge", "--omegas", "20,40", "--steps", "0.2,0.1", "--T", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 1 + 4);
    assert!(stderr(&o).contains("slope"));
}

#[test]
fn expm_bench_lists_each_backend() {
    let o = run(&[
        "expm-bench",
        "--scenario",
        "toeplitz",
        "--df",
        "8",
        "--omega",
        "100",
        "--backends",
        "symplectic,diag,expm-taylor,iterative",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 5);
    assert_eq!(r[1][0], "symplectic");
    assert_eq!(r[1][4], "40");
    assert_eq!(r[2][4], "0");
    let symp: f64 = r[1][6].parse().unwrap();
    let taylor: f64 = r[3][6].parse().unwrap();
    assert!(taylor > 1e3 * symp);
}
