mod common;

use common::{j, rng};
use multiscale_core::diagnostics::{jacobian_fd, symplectic_residual};
use multiscale_core::expm::{structure_residuals, symplectic_expm, verlet_seed};
use multiscale_core::integrator::phi3_step;
use multiscale_core::iterative::{
    iter_init, lie_trotter_bound, lie_trotter_exp, IterUpdate, SeedBackend,
};
use multiscale_core::linalg::{max_abs, symmetrize};
use multiscale_core::oracles::{expm_diagonalization, fine_verlet_flow, VerletMode};
use multiscale_core::scenarios::{diag1d, nondiag3d, toeplitz};
use multiscale_core::{energy, BlockGenerator, PhaseState, Scenario, SymplecticForm};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

const FAST_DIMS: [usize; 4] = [1, 2, 5, 20];

fn random_problem(seed: u64, d: usize, ds: usize) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let mut r = rng(seed);
    let k = common::random_spd(&mut r, d, 0.5, 3.0);
    let dk = (0..ds)
        .map(|_| common::random_symmetric(&mut r, d, 1.0))
        .collect();
    (k, dk)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn seed_and_triple_keep_structure(
        seed in any::<u64>(),
        di in 0..FAST_DIMS.len(),
        ds in prop::sample::select(vec![1usize, 3]),
        eps in 1e-3f64..1.0,
    ) {
        let d = FAST_DIMS[di];
        let (k, dk) = random_problem(seed, d, ds);
        let jm = j(d);
        let s = verlet_seed(&k, &dk, eps, 0.1 / 1024.0).unwrap();
        prop_assert!(max_abs(&(s.a.transpose() * &jm * &s.a - &jm)) <= 1e-10);
        prop_assert!(max_abs(&(s.c.transpose() * &jm * &s.c - &jm)) <= 1e-10);
        prop_assert!(max_abs(&(s.a.transpose() * &s.c - DMatrix::identity(2 * d, 2 * d))) <= 1e-10);
        let t = symplectic_expm(&k, &dk, eps, 0.1, 10).unwrap();
        let (f3, f2, inv, sym) = structure_residuals(&t);
        prop_assert!(f3 <= 1e-10 && f2 <= 1e-10 && inv <= 1e-10 && sym <= 1e-10, "{f3:e} {f2:e} {inv:e} {sym:e}");
        prop_assert_eq!(t.mult_count, 2 * (ds as u64 + 1) * 10);
    }

    #[test]
    fn g2_is_minus_j_times_slow_derivative_of_f3(seed in any::<u64>(), d in 1usize..5, eps in 1e-2f64..1.0) {
        let (k, dk) = random_problem(seed, d, 2);
        let t = symplectic_expm(&k, &dk, eps, 0.1, 10).unwrap();
        let step = 1e-5;
        for (i, dki) in dk.iter().enumerate() {
            let fp = symplectic_expm(&(&k + dki * step), &dk, eps, 0.1, 10).unwrap().f3;
            let fm = symplectic_expm(&(&k - dki * step), &dk, eps, 0.1, 10).unwrap().f3;
            let pred = -j(d) * (fp - fm) / (2.0 * step);
            for (a, b) in t.g2[i].iter().zip(pred.iter()) {
                if a.abs() >= 1.0 {
                    prop_assert!(((a - b) / a).abs() <= 1e-5, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn diagonalization_flow_is_symplectic_for_random_stiffness(
        seed in any::<u64>(), di in 0..FAST_DIMS.len(), eps in 1e-4f64..1.0, h in 0.0f64..1.0,
    ) {
        let d = FAST_DIMS[di];
        let (k, _) = random_problem(seed, d, 0);
        let f = expm_diagonalization(&k, eps, h).unwrap();
        prop_assert!(symplectic_residual(&f, &SymplecticForm::canonical(d)).unwrap() <= 1e-10);
    }

    #[test]
    fn update_increments_annihilate(seed in any::<u64>(), d in 1usize..6, ds in 1usize..4) {
        let (k0, dk0) = random_problem(seed, d, ds);
        let (k1, dk1) = random_problem(seed ^ 0x9e37, d, ds);
        let st = iter_init(&k0, &dk0, 0.01, 0.1, 10, SeedBackend::Verlet).unwrap();
        let u = IterUpdate::new(&st, &k1, &dk1).unwrap();
        prop_assert!(max_abs(&(&u.d * &u.d)) == 0.0);
        for e in &u.e {
            prop_assert!(max_abs(&(&u.d * e)) == 0.0);
            prop_assert!(max_abs(&(e * u.d.transpose())) == 0.0);
        }
    }

    #[test]
    fn lie_trotter_error_within_bound(seed in any::<u64>(), size in 2usize..11, ratio in 1e-4f64..1e-2) {
        let mut r = rng(seed);
        let a: DMatrix<f64> = DMatrix::from_fn(size, size, |_, _| r.random_range(-1.0..1.0));
        let b0: DMatrix<f64> = DMatrix::from_fn(size, size, |_, _| r.random_range(-1.0..1.0));
        let b = &b0 * (ratio * a.norm() / b0.norm());
        let n = 8;
        let scale = 2f64.powi(-(n as i32));
        let approx = lie_trotter_exp(&(&a * scale).exp(), &a, &(&a + &b), n).unwrap();
        let exact = (&a + &b).exp();
        let err = multiscale_core::linalg::norm2(&(approx - &exact));
        let bound = lie_trotter_bound(&a, &b, n);
        prop_assert!(err <= bound + 1e-13 * exact.norm(), "{err:e} > {bound:e}");
    }

    #[test]
    fn residual_of_product_is_subadditive(seed in any::<u64>(), d in 1usize..5) {
        let mut r = rng(seed);
        let s = common::random_symmetric(&mut r, d, 1.0);
        let shear = multiscale_core::linalg::block2(
            &DMatrix::identity(d, d), &s, &DMatrix::zeros(d, d), &DMatrix::identity(d, d),
        );
        let (k, _) = random_problem(seed ^ 1, d, 0);
        let rot = expm_diagonalization(&k, 1.0, r.random_range(0.0..3.0)).unwrap();
        let form = SymplecticForm::canonical(d);
        let (ra, rb) = (symplectic_residual(&shear, &form).unwrap(), symplectic_residual(&rot, &form).unwrap());
        let rab = symplectic_residual(&(&shear * &rot), &form).unwrap();
        let roundoff = 64.0 * f64::EPSILON * (shear.norm() * rot.norm()).powi(2);
        prop_assert!(rab <= ra + rb + roundoff);
    }

    #[test]
    fn scenario_stiffness_symmetric_and_gradient_consistent(x in 0.8f64..1.5, which in 0usize..3) {
        let sc = scenario(which);
        let q = DVector::from_element(1, x);
        let st = sc.system.stiffness_at(&q).unwrap();
        prop_assert_eq!(max_abs(&(&st.k - st.k.transpose())), 0.0);
        let step = 1e-5;
        let kp = sc.system.stiffness_at(&DVector::from_element(1, x + step)).unwrap().k;
        let km = sc.system.stiffness_at(&DVector::from_element(1, x - step)).unwrap().k;
        let fd = (kp - km) / (2.0 * step);
        prop_assert!(max_abs(&(&fd - &st.dk[0])) <= 1e-5 * max_abs(&st.dk[0]).max(1.0));
    }

    #[test]
    fn energy_even_in_fast_variables(which in 0usize..3, seed in any::<u64>()) {
        let sc = scenario(which);
        let mut r = rng(seed);
        let d = sc.system.d_fast();
        let s = PhaseState::new(
            DVector::from_fn(d, |_, _| r.random_range(-0.05..0.05)),
            DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0)),
            DVector::from_element(1, r.random_range(0.8..1.4)),
            DVector::from_element(1, r.random_range(-1.0..1.0)),
        ).unwrap();
        let mut f = s.clone();
        f.q_fast = -&f.q_fast;
        f.p_fast = -&f.p_fast;
        let (e, ef) = (energy(&sc.system, &s).unwrap(), energy(&sc.system, &f).unwrap());
        prop_assert!((e - ef).abs() <= 1e-12 * e.abs().max(1.0));
    }

    #[test]
    fn frozen_verlet_reverses(seed in any::<u64>()) {
        let sc = nondiag3d(30.0).unwrap();
        let mut r = rng(seed);
        let mut s = sc.initial.clone();
        s.p_fast = DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0));
        s.p_slow[0] = r.random_range(-1.0..1.0);
        let flip = |s: &PhaseState| {
            let mut s = s.clone();
            s.p_fast = -&s.p_fast;
            s.p_slow = -&s.p_slow;
            s
        };
        let fwd = fine_verlet_flow(&sc.system, &s, 1e-4, 0.3, VerletMode::FrozenSlow).unwrap();
        let back = flip(&fine_verlet_flow(&sc.system, &flip(&fwd), 1e-4, 0.3, VerletMode::FrozenSlow).unwrap());
        prop_assert!((back.to_flat() - s.to_flat()).amax() <= 1e-8);
    }
}

fn scenario(which: usize) -> Scenario {
    match which {
        0 => diag1d(100.0).unwrap(),
        1 => nondiag3d(100.0).unwrap(),
        _ => toeplitz(100.0, 8, 0).unwrap(),
    }
}

#[test]
fn rotation_error_is_second_order_in_base_step() {
    let exact =
        expm_diagonalization(&DMatrix::identity(1, 1), 1.0, std::f64::consts::FRAC_PI_2).unwrap();
    let err = |n| {
        let t = symplectic_expm(
            &DMatrix::identity(1, 1),
            &[],
            1.0,
            std::f64::consts::FRAC_PI_2,
            n,
        )
        .unwrap();
        max_abs(&(t.f3 - &exact))
    };
    for n in 6..10 {
        let ratio = err(n) / err(n + 1);
        assert!((3.5..=4.5).contains(&ratio), "n={n}: {ratio}");
    }
}

#[test]
fn corrupted_drift_block_breaks_symplecticity() {
    for sc in [diag1d(100.0).unwrap(), nondiag3d(100.0).unwrap()] {
        let sys = &sc.system;
        let form = SymplecticForm::split(sys.d_fast(), 1);
        let mut s0 = sc.initial.clone();
        s0.p_fast[0] = 0.5;
        let res = |corrupt: f64| {
            let map = |s: &PhaseState| {
                let st = sys.stiffness_at(&s.q_slow)?;
                let mut t = symplectic_expm(&st.k, &st.dk, sys.epsilon(), 0.1, 10)?;
                t.g2[0].add_scalar_mut(corrupt);
                phi3_step(s, &t)
            };
            symplectic_residual(&jacobian_fd(map, &s0, 1e-6).unwrap(), &form).unwrap()
        };
        let (good, bad) = (res(0.0), res(1e-3));
        assert!(good <= 1e-6, "{good:e}");
        assert!(bad > 1e-4, "{bad:e}");
    }
}

#[test]
fn block_generator_is_hamiltonian_for_random_stiffness() {
    let mut r = rng(11);
    for d in FAST_DIMS {
        let k = symmetrize(&common::random_spd(&mut r, d, 0.5, 2.0));
        let dk = vec![common::random_symmetric(&mut r, d, 1.0)];
        let g = BlockGenerator::new(&k, &dk, 0.01).unwrap();
        let jn = j(d) * &g.n;
        assert_eq!(max_abs(&(&jn - jn.transpose())), 0.0);
        assert_eq!(max_abs(&(&g.m[0] - g.m[0].transpose())), 0.0);
    }
}
