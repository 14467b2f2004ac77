#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oddac::controller::ControllerConfig;
use oddac::harness::RunLog;
use oddac::linalg::{induced_two_norm, min_eigenvalue, spd_inverse, sqrt_psd};
use oddac::window::{sigma_d_contains, sigma_i_contains, DataMatrices, DataWindow};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    // Box-Muller keeps the helper free of extra distributions.
    DMatrix::from_fn(r, c, |_, _| {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// Window data for period `index` rebuilt from the log rows before `index·T`.
pub fn window_from_log(log: &RunLog, cfg: &ControllerConfig, index: usize) -> DataMatrices {
    let ts = index * cfg.period;
    let xs = log.states();
    let us = log.inputs();
    let mut w = DataWindow::new(cfg.window, ts - cfg.window);
    for t in ts - cfg.window..ts {
        w.push_sample(xs[t].clone(), us[t].clone(), xs[t + 1].clone()).unwrap();
    }
    w.build_data_matrices(cfg.lipschitz).unwrap()
}

/// Outcome of checking one certificate against sampled plants.
#[derive(Debug, Default)]
pub struct SoundnessTally {
    pub accepted: usize,
    pub rejected: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

/// Samples `count` pairs `(A, B) = (A_i + ΔA, B_i + ΔB)` with `(A_i, B_i)`
/// consistent with `d` and `(ΔA, ΔB)` in the drift ball, and checks
/// `(A+BK)ᵀP(A+BK) ⪯ λP + 1e-7·I` for each.
#[allow(clippy::too_many_arguments)]
pub fn sample_soundness(
    d: &DataMatrices,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: f64,
    lipschitz: f64,
    period: usize,
    count: usize,
    seed: u64,
) -> SoundnessTally {
    let (n, m) = (d.n(), d.m());
    let mut rng = rng(seed);
    let z = d.regressor();
    let gram = &z * z.transpose();
    let gram_inv = spd_inverse(&gram).expect("window data must be rich enough to sample its consistency set");
    let center = &d.x_plus * z.transpose() * &gram_inv;
    let resid = &d.x_plus - &center * &z;
    let room = min_eigenvalue(&(DMatrix::identity(n, n) * d.pi - &resid * resid.transpose()));
    assert!(room >= -1e-9, "least-squares fit is outside the consistency set");
    let room = room.max(0.0);
    let inv_root = sqrt_psd(&gram_inv).unwrap();
    let radius = lipschitz * period as f64;

    let mut tally = SoundnessTally {
        worst_margin: f64::INFINITY,
        ..Default::default()
    };
    while tally.accepted < count {
        // Consistency-set sample: ΔZZᵀΔᵀ = ρ² G Gᵀ/‖G‖² with ρ slightly past the
        // guaranteed inner radius so rejection is exercised.
        let g = gaussian(&mut rng, n, n + m);
        let scale = rng.random_range(0.0..1.1) * room.sqrt() / induced_two_norm(&g).max(1e-300);
        let delta = g * scale * &inv_root;
        let ab = &center + delta;
        let a_i = ab.columns(0, n).into_owned();
        let b_i = ab.columns(n, m).into_owned();
        let h = gaussian(&mut rng, n, n + m);
        let drift = &h * (rng.random_range(0.0..1.05) * radius / induced_two_norm(&h).max(1e-300));
        let da = drift.columns(0, n).into_owned();
        let db = drift.columns(n, m).into_owned();
        if !sigma_i_contains(d, &a_i, &b_i).unwrap() || !sigma_d_contains(&da, &db, lipschitz, period) {
            tally.rejected += 1;
            continue;
        }
        tally.accepted += 1;
        let acl = (a_i + da) + (b_i + db) * k;
        let margin = min_eigenvalue(&(p * lambda - acl.transpose() * p * &acl));
        tally.worst_margin = tally.worst_margin.min(margin);
        if margin < -1e-7 {
            tally.violations += 1;
        }
    }
    tally
}

pub fn states(log: &RunLog) -> Vec<DVector<f64>> {
    log.states()
}
