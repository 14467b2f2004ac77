mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use oddac::linalg::{induced_two_norm, min_eigenvalue, spd_inverse};
use oddac::lmi::{
    build_aux_dwell, build_aux_sandwich, build_n1_n2, build_problem, expand_schur, gain_program, ThetaMatrix,
};
use oddac::sdp::{self, backend_by_name, SolveStatus};
use oddac::window::{DataMatrices, DataWindow};

/// Window of `len` samples from a plant whose matrices move by at most
/// `lipschitz` per step; returns the data and the matrices one step past it.
fn drifting_window(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    len: usize,
    lipschitz: f64,
) -> (DataMatrices, DMatrix<f64>, DMatrix<f64>) {
    let mut ab = common::gaussian(rng, n, n + m) * 0.5;
    let mut w = DataWindow::new(len, 0);
    for _ in 0..len {
        let x = DVector::from_column_slice(common::gaussian(rng, n, 1).as_slice());
        let u = DVector::from_column_slice(common::gaussian(rng, m, 1).as_slice());
        let next = ab.columns(0, n) * &x + ab.columns(n, m) * &u;
        w.push_sample(x, u, next).unwrap();
        let h = common::gaussian(rng, n, n + m);
        let step = rng.random_range(0.0..=1.0) * lipschitz / induced_two_norm(&h).max(1e-300);
        ab += h * step;
    }
    let d = w.build_data_matrices(lipschitz).unwrap();
    (d, ab.columns(0, n).into_owned(), ab.columns(n, m).into_owned())
}

/// Schur complement of the trailing `n × n` block.
fn schur_tail(mat: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = mat.nrows() - n;
    let a = mat.view((0, 0), (k, k));
    let b = mat.view((0, k), (k, n));
    let c = mat.view((k, k), (n, n)).into_owned();
    a - b * spd_inverse(&c).unwrap() * b.transpose()
}

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=3, 1usize..=2, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lifted_schur_complement_is_reduced_form((n, m, seed) in dims(), a1 in 0.0..5.0f64, a2 in 0.0..5.0f64, lambda in 0.05..0.99f64) {
        let mut rng = common::rng(seed);
        let (d, _, _) = drifting_window(&mut rng, n, m, n + m + 2, 0.05);
        let q = common::random_spd(&mut rng, n);
        let l = common::gaussian(&mut rng, m, n);
        let problem = build_problem(&d, lambda, 0.05, 7).unwrap();
        let lifted = problem.lifted_matrix(&q, &l, a1, a2).unwrap();
        let (n1, n2) = build_n1_n2(&d, 0.05, 7);
        let reduced = expand_schur(&q, &l, lambda).unwrap() - n1 * a1 - n2 * a2;
        let diff = (schur_tail(&lifted, n) - &reduced).abs().max();
        prop_assert!(diff <= 1e-9 * (1.0 + reduced.abs().max()), "diff {}", diff);
    }

    #[test]
    fn lifted_matrix_is_symmetric_and_homogeneous((n, m, seed) in dims(), kappa in 0.1..10.0f64) {
        let mut rng = common::rng(seed);
        let (d, _, _) = drifting_window(&mut rng, n, m, n + m + 1, 0.01);
        let problem = build_problem(&d, 0.8, 0.01, 10).unwrap();
        let q = common::random_spd(&mut rng, n);
        let l = common::gaussian(&mut rng, m, n);
        let mat = problem.lifted_matrix(&q, &l, 0.3, 0.7).unwrap();
        prop_assert_eq!(mat.nrows(), 4 * n + 2 * m);
        prop_assert!((&mat - mat.transpose()).abs().max() == 0.0);
        let r = problem.residual(&q, &l, 0.3, 0.7).unwrap();
        let rk = problem.residual(&(&q * kappa), &(&l * kappa), 0.3 * kappa, 0.7 * kappa).unwrap();
        prop_assert!((rk - kappa * r).abs() <= 1e-9 * kappa * (1.0 + r.abs()));
    }

    #[test]
    fn matrices_one_step_past_the_window_satisfy_n1((n, m, seed) in dims(), lipschitz in 0.0..0.2f64) {
        let mut rng = common::rng(seed);
        let (d, a, b) = drifting_window(&mut rng, n, m, n + m + 4, lipschitz);
        let (n1, _) = build_n1_n2(&d, lipschitz, 10);
        let zero_a = DMatrix::zeros(n, n);
        let zero_b = DMatrix::zeros(n, m);
        let form = ThetaMatrix::new(&a, &b, &zero_a, &zero_b).quadratic_form(&n1);
        // Θ N₁ Θᵀ is πI − W Wᵀ for the true disturbance W.
        let w = d.disturbance(&a, &b).unwrap();
        let direct = DMatrix::identity(n, n) * d.pi - &w * w.transpose();
        prop_assert!((&form - &direct).abs().max() <= 1e-9 * (1.0 + direct.abs().max()));
        prop_assert!(min_eigenvalue(&form) >= -1e-9 * (1.0 + d.pi));
    }

    #[test]
    fn drift_ball_is_exactly_n2((n, m, seed) in dims(), lipschitz in 1e-4..0.1f64, frac in 0.0..1.0f64) {
        let mut rng = common::rng(seed);
        let period = 10;
        let (d, a, b) = drifting_window(&mut rng, n, m, n + m, lipschitz);
        let (_, n2) = build_n1_n2(&d, lipschitz, period);
        let h = common::gaussian(&mut rng, n, n + m);
        let radius = lipschitz * period as f64;
        let unit = &h / induced_two_norm(&h);
        let inside = &unit * (frac * radius);
        let th = ThetaMatrix::new(&a, &b, &inside.columns(0, n).into_owned(), &inside.columns(n, m).into_owned());
        prop_assert!(min_eigenvalue(&th.quadratic_form(&n2)) >= -1e-12);
        let outside = &unit * (1.01 * radius);
        let th = ThetaMatrix::new(&a, &b, &outside.columns(0, n).into_owned(), &outside.columns(n, m).into_owned());
        prop_assert!(min_eigenvalue(&th.quadratic_form(&n2)) < 0.0);
    }
}

#[test]
fn theta_form_of_reduced_lmi_is_closed_loop_decrease() {
    let mut rng = common::rng(3);
    let (n, m) = (3, 2);
    let q = common::random_spd(&mut rng, n);
    let l = common::gaussian(&mut rng, m, n);
    let k = &l * spd_inverse(&q).unwrap();
    let (a, b) = (common::gaussian(&mut rng, n, n), common::gaussian(&mut rng, n, m));
    let (da, db) = (
        common::gaussian(&mut rng, n, n) * 0.1,
        common::gaussian(&mut rng, n, m) * 0.1,
    );
    let form = ThetaMatrix::new(&a, &b, &da, &db).quadratic_form(&expand_schur(&q, &l, 0.7).unwrap());
    let acl = (&a + &da) + (&b + &db) * &k;
    let direct = &q * 0.7 - &acl * &q * acl.transpose();
    assert!((form - direct).abs().max() < 1e-10);
}

#[test]
fn certified_gains_hold_on_sampled_plants() {
    let backend = backend_by_name("barrier").unwrap();
    let (lambda, lipschitz, period) = (0.8, 2e-3, 10);
    let mut feasible = 0;
    for seed in 0..8 {
        let mut rng = common::rng(100 + seed);
        let (n, m) = (2 + (seed as usize % 2), 1 + (seed as usize / 4));
        let (d, _, _) = drifting_window(&mut rng, n, m, 3 * (n + m), lipschitz);
        let problem = build_problem(&d, lambda, lipschitz, period).unwrap();
        let prog = gain_program(&problem, &build_aux_sandwich(1e-3, 1e3, n).unwrap(), None);
        let cert = sdp::solve(&prog, backend.as_ref()).unwrap();
        if !cert.is_feasible() {
            continue;
        }
        feasible += 1;
        assert!((&cert.k * &cert.q - &cert.l).abs().max() < 1e-8);
        assert!((&cert.p * &cert.q - DMatrix::identity(n, n)).abs().max() < 1e-8);
        let tally = common::sample_soundness(&d, &cert.k, &cert.p, lambda, lipschitz, period, 200, seed);
        assert_eq!(tally.violations, 0, "seed {seed}: {tally:?}");
        assert!(tally.rejected > 0, "sampler never left the sets");
    }
    assert!(feasible >= 4, "only {feasible} of 8 instances feasible");
}

#[test]
fn inflated_drift_bound_loses_feasibility() {
    let backend = backend_by_name("barrier").unwrap();
    let mut rng = common::rng(7);
    let (n, m, lipschitz, period) = (2, 1, 1e-3, 10);
    let (d, _, _) = drifting_window(&mut rng, n, m, 9, lipschitz);
    let sandwich = build_aux_sandwich(1e-3, 1e3, n).unwrap();
    let solve = |l: f64| {
        let d = DataMatrices {
            pi: d.pi * (l / lipschitz).powi(2),
            ..d.clone()
        };
        let prog = gain_program(&build_problem(&d, 0.8, l, period).unwrap(), &sandwich, None);
        sdp::solve(&prog, backend.as_ref()).unwrap().status
    };
    assert_eq!(solve(lipschitz), SolveStatus::Feasible);
    assert_ne!(solve(1000.0 * lipschitz), SolveStatus::Feasible);
}

#[test]
fn dwell_constraint_brackets_growth_factor() {
    let mut rng = common::rng(5);
    let q_prev = common::random_spd(&mut rng, 4);
    let dwell = build_aux_dwell(&q_prev, 0.9, 0.91, 100).unwrap();
    let g = dwell.growth_factor();
    assert!((g - (0.91f64 / 0.9).powi(100)).abs() < 1e-9 * g);
    assert!(g > 3.0 && g < 3.1, "{g}");
    // P_next = c P_prev, i.e. Q_next = Q_prev / c, is allowed iff c ≤ g.
    assert!(dwell.residual(&(&q_prev / 3.0)) >= 0.0);
    assert!(dwell.residual(&(&q_prev / 3.1)) < 0.0);
    assert!(dwell.residual(&q_prev) > 0.0);
}
