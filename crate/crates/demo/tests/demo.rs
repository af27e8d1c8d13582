use multiscale_demo::{ring_residuals, ring_resonance, run_ring};

#[test]
fn ring_run_has_one_sample_per_step() {
    let r = run_ring(100.0, 0.1, 10, "symplectic", 2.0).unwrap();
    assert_eq!(r.times().len(), 21);
    assert!(r.error().is_none());
    assert_eq!(r.energy_drift()[0], 0.0);
    assert!(r.energy_drift().iter().all(|d| d.abs() < 0.1));
    assert!(r.invariant().iter().all(|i| i.is_finite()));
}

#[test]
fn ring_run_rejects_bad_input() {
    assert!(run_ring(100.0, 0.1, 10, "fine-verlet", 1.0).is_err());
    assert!(run_ring(100.0, -0.1, 10, "symplectic", 1.0).is_err());
    assert!(run_ring(100.0, 0.1, 10, "bogus", 1.0).is_err());
}

#[test]
fn small_resonance_scan_tracks_reference() {
    let ratios = ring_resonance(20.0, 0.01, 0.03, 0.01, 1.0).unwrap();
    assert_eq!(ratios.len(), 3);
    assert!(ratios.iter().all(|r| (r - 1.0).abs() < 0.05), "{ratios:?}");
    assert!(ring_resonance(20.0, 0.001, 1.0, 0.001, 1.0).is_err());
}

#[test]
fn taylor_squaring_loses_structure() {
    let r = ring_residuals(1000.0, 0.1, 10).unwrap();
    assert!(r[0] < 1e-10 && r[2] < 1e-10, "{r:?}");
    assert!(r[1] > 1.0, "{r:?}");
}
