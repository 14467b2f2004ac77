//! Post-hoc stability checks on a finished closed-loop run.
//!
//! Every inequality the stability argument relies on is re-evaluated on the
//! recorded states with the true plant matrices: per-step Lyapunov decrease,
//! the scaled Lyapunov trace `q(t)` and its two claims, the exponential bound,
//! the dwell-time relation and set membership of the true matrices.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::controller::{ControllerConfig, PeriodGain};
use crate::linalg::{hstack, induced_two_norm, max_eigenvalue, min_eigenvalue, pow_log, sqrt_psd};
use crate::plant::MatrixTrajectory;
use crate::window::{sigma_d_contains, DataWindow, DRIFT_TOL, PSD_TOL};

/// Absolute part of the trace tolerance `TRACE_TOL·(1 + |x(t)|)`.
pub const TRACE_TOL: f64 = 1e-7;

/// Slack on the Lyapunov inequality at the true matrices.
pub const LYAPUNOV_TOL: f64 = 1e-7;

pub mod checks {
    pub const INITIAL_GAIN: &str = "initial_gain";
    pub const LYAPUNOV_STEP: &str = "lyapunov_step";
    pub const Q_SANDWICH_LOWER: &str = "q_sandwich_lower";
    pub const Q_SANDWICH_UPPER: &str = "q_sandwich_upper";
    pub const Q_CONSECUTIVE: &str = "q_consecutive";
    pub const PGES_BOUND: &str = "pges_bound";
    pub const DWELL_TIME: &str = "dwell_time";
    pub const SIGMA_I: &str = "data_consistency";
    pub const SIGMA_D: &str = "drift_ball";
    pub const TRUE_LYAPUNOV: &str = "true_matrix_lyapunov";
    pub const UNCERTIFIED: &str = "uncertified_period";
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("inconsistent run data: {0}")]
    Data(String),
}

/// A failed check; `margin` is negative by how much it failed (NaN when no
/// numeric margin applies).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: usize,
    pub check: &'static str,
    pub margin: f64,
}

fn tol(x: &DVector<f64>) -> f64 {
    TRACE_TOL * (1.0 + x.norm())
}

/// `λ_min(λP₀ − (A₀+B₀K₀)ᵀ P₀ (A₀+B₀K₀))`; non-negative when the initial gain
/// is λ-contractive in the `P₀` norm.
pub fn check_initial_gain(
    a0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let acl = a0 + b0 * k0;
    min_eigenvalue(&(p0 * lambda - acl.transpose() * p0 * &acl))
}

/// `max_{0 ≤ t < horizon} ‖B(t)‖₂` (just `‖B(0)‖₂` for an empty horizon).
pub fn input_gain_bound(traj: &MatrixTrajectory, horizon: usize) -> f64 {
    (0..horizon.max(1).min(traj.horizon() + 1))
        .map(|t| induced_two_norm(traj.b(t)))
        .fold(0.0, f64::max)
}

/// Gain record in force at time `t`: the latest period starting at or before it.
fn period_at<'a>(periods: &'a [PeriodGain], cfg: &ControllerConfig, t: usize) -> &'a PeriodGain {
    let i = t / cfg.period;
    periods.iter().rev().find(|p| p.index <= i).unwrap_or(&periods[0])
}

fn check_periods(periods: &[PeriodGain]) -> Result<(), AnalysisError> {
    if periods.is_empty() {
        return Err(AnalysisError::Data("no period gains recorded".into()));
    }
    Ok(())
}

/// Square roots of every period's `P`.
fn roots(periods: &[PeriodGain]) -> Result<Vec<DMatrix<f64>>, AnalysisError> {
    periods
        .iter()
        .map(|p| sqrt_psd(&p.p).ok_or_else(|| AnalysisError::Data(format!("P of period {} is not PSD", p.index))))
        .collect()
}

fn root_at<'a>(
    periods: &[PeriodGain],
    roots: &'a [DMatrix<f64>],
    cfg: &ControllerConfig,
    t: usize,
) -> &'a DMatrix<f64> {
    let target = period_at(periods, cfg, t).index;
    let pos = periods.iter().position(|p| p.index == target).unwrap_or(0);
    &roots[pos]
}

/// `|P_i^{1/2} x(t+1)| ≤ √λ |P_i^{1/2} x(t)| + √σ₂ B̄ v̄ + tol` for every step.
pub fn lyapunov_step_check(
    xs: &[DVector<f64>],
    periods: &[PeriodGain],
    cfg: &ControllerConfig,
    b_bar: f64,
) -> Result<Vec<Violation>, AnalysisError> {
    check_periods(periods)?;
    let r = roots(periods)?;
    let offset = cfg.sigma2.sqrt() * b_bar * cfg.v_bar;
    let mut out = Vec::new();
    for t in 0..xs.len().saturating_sub(1) {
        let root = root_at(periods, &r, cfg, t);
        let now = (root * &xs[t]).norm();
        let next = (root * &xs[t + 1]).norm();
        let margin = cfg.lambda.sqrt() * now + offset + tol(&xs[t]) - next;
        if margin < 0.0 {
            out.push(Violation {
                t,
                check: checks::LYAPUNOV_STEP,
                margin,
            });
        }
    }
    Ok(out)
}

/// `q(t) = (λ̂/λ)^{(t − iT)/2} |P_i^{1/2} x(t)|`, `i = ⌊t/T⌋`.
pub fn q_trace(xs: &[DVector<f64>], periods: &[PeriodGain], cfg: &ControllerConfig) -> Result<Vec<f64>, AnalysisError> {
    check_periods(periods)?;
    let r = roots(periods)?;
    let ratio = cfg.lambda_hat / cfg.lambda;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let phase = (t % cfg.period) as f64;
            pow_log(ratio, 0.5 * phase) * (root_at(periods, &r, cfg, t) * x).norm()
        })
        .collect())
}

/// Sandwich `√σ₁|x| ≤ q ≤ (λ̂/λ)^{(T−1)/2} √σ₂ |x|` and the one-step claim
/// `q(t+1) ≤ √λ̂ q(t) + (λ̂/λ)^{T/2} √σ₂ B̄ v̄`, each up to `tol`.
pub fn q_claims(q: &[f64], xs: &[DVector<f64>], cfg: &ControllerConfig, b_bar: f64) -> Vec<Violation> {
    let ratio = cfg.lambda_hat / cfg.lambda;
    let upper_coef = pow_log(ratio, 0.5 * (cfg.period as f64 - 1.0)) * cfg.sigma2.sqrt();
    let offset = pow_log(ratio, 0.5 * cfg.period as f64) * cfg.sigma2.sqrt() * b_bar * cfg.v_bar;
    let mut out = Vec::new();
    for (t, (qt, x)) in q.iter().zip(xs).enumerate() {
        let nx = x.norm();
        let lower = qt - cfg.sigma1.sqrt() * nx + tol(x);
        if lower < 0.0 {
            out.push(Violation {
                t,
                check: checks::Q_SANDWICH_LOWER,
                margin: lower,
            });
        }
        let upper = upper_coef * nx + tol(x) - qt;
        if upper < 0.0 {
            out.push(Violation {
                t,
                check: checks::Q_SANDWICH_UPPER,
                margin: upper,
            });
        }
        if let Some(q_next) = q.get(t + 1) {
            let m = cfg.lambda_hat.sqrt() * qt + offset + tol(x) - q_next;
            if m < 0.0 {
                out.push(Violation {
                    t,
                    check: checks::Q_CONSECUTIVE,
                    margin: m,
                });
            }
        }
    }
    out
}

/// Exponential envelope with residual ball,
/// `(σ₂/√σ₁) λ̂^{t/2} |x₀| + √(σ₂/σ₁) (1 − √λ̂)⁻¹ (λ̂/λ)^{T/2} B̄ v̄`.
pub fn pges_bound(cfg: &ControllerConfig, b_bar: f64, x0_norm: f64, t: usize) -> Result<f64, AnalysisError> {
    if cfg.lambda_hat.is_nan() || cfg.lambda_hat >= 1.0 {
        return Err(AnalysisError::Parameter(format!(
            "lambda_hat = {} must be < 1",
            cfg.lambda_hat
        )));
    }
    if !(cfg.lambda > 0.0 && cfg.sigma1 > 0.0 && cfg.sigma2 > 0.0 && b_bar >= 0.0) {
        return Err(AnalysisError::Parameter(
            "lambda, sigma1, sigma2 must be positive and B_bar non-negative".into(),
        ));
    }
    let decay = cfg.sigma2 / cfg.sigma1.sqrt() * pow_log(cfg.lambda_hat, 0.5 * t as f64) * x0_norm;
    let ball = (cfg.sigma2 / cfg.sigma1).sqrt() / (1.0 - cfg.lambda_hat.sqrt())
        * pow_log(cfg.lambda_hat / cfg.lambda, 0.5 * cfg.period as f64)
        * b_bar
        * cfg.v_bar;
    Ok(decay + ball)
}

/// State bound obtained by iterating the one-step `q` claim from the upper
/// sandwich at `t = 0` and converting back with the lower sandwich.
pub fn unrolled_bound(cfg: &ControllerConfig, b_bar: f64, x0_norm: f64, horizon: usize) -> Vec<f64> {
    let ratio = cfg.lambda_hat / cfg.lambda;
    let offset = pow_log(ratio, 0.5 * cfg.period as f64) * cfg.sigma2.sqrt() * b_bar * cfg.v_bar;
    let rate = cfg.lambda_hat.sqrt();
    let mut q = cfg.sigma2.sqrt() * x0_norm;
    let mut out = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        out.push(q / cfg.sigma1.sqrt());
        q = rate * q + offset;
    }
    out
}

/// Dwell-time test `T > −ln μ / ln λ`.
pub fn check_dwell(mu: f64, lambda: f64, period: usize) -> bool {
    (period as f64) > -mu.ln() / lambda.ln()
}

/// Smallest `μ` with `P_{i+1} ⪯ μ P_i` over consecutive periods (1 with
/// fewer than two periods).
pub fn switch_growth(periods: &[PeriodGain]) -> Result<f64, AnalysisError> {
    let mut mu: f64 = 1.0;
    let mut first = true;
    for w in periods.windows(2) {
        let chol = nalgebra::Cholesky::new(w[0].p.clone())
            .ok_or_else(|| AnalysisError::Data(format!("P of period {} is not positive definite", w[0].index)))?;
        let l = chol.l();
        let inner = l
            .solve_lower_triangular(&w[1].p)
            .and_then(|left| l.solve_lower_triangular(&left.transpose()))
            .ok_or_else(|| AnalysisError::Data("singular Cholesky factor".into()))?;
        let g = max_eigenvalue(&inner);
        mu = if first { g } else { mu.max(g) };
        first = false;
    }
    Ok(mu)
}

/// Checks the true matrices against the sets the certificates were robust to:
/// data consistency at each switch instant, the drift ball within each period,
/// and the Lyapunov inequality of the period's gain at every step.
pub fn set_membership_audit(
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    periods: &[PeriodGain],
    traj: &MatrixTrajectory,
    cfg: &ControllerConfig,
) -> Result<Vec<Violation>, AnalysisError> {
    check_periods(periods)?;
    if us.len() != xs.len() {
        return Err(AnalysisError::Data(format!(
            "{} states but {} inputs",
            xs.len(),
            us.len()
        )));
    }
    let horizon = xs.len().saturating_sub(1);
    let (period, tw) = (cfg.period, cfg.window);
    let radius = cfg.lipschitz * period as f64;
    let mut out = Vec::new();
    for p in periods {
        let ts = p.index * period;
        if ts > horizon {
            continue;
        }
        if !p.certified {
            out.push(Violation {
                t: ts,
                check: checks::UNCERTIFIED,
                margin: f64::NAN,
            });
        }
        if p.index > 0 {
            let mut w = DataWindow::new(tw, ts - tw);
            for t in ts - tw..ts {
                w.push_sample(xs[t].clone(), us[t].clone(), xs[t + 1].clone())
                    .map_err(|e| AnalysisError::Data(e.to_string()))?;
            }
            let d = w
                .build_data_matrices(cfg.lipschitz)
                .map_err(|e| AnalysisError::Data(e.to_string()))?;
            let resid = d
                .disturbance(traj.a(ts), traj.b(ts))
                .map_err(|e| AnalysisError::Data(e.to_string()))?;
            let n = d.n();
            let margin = min_eigenvalue(&(DMatrix::identity(n, n) * d.pi - &resid * resid.transpose()));
            if margin < -PSD_TOL {
                out.push(Violation {
                    t: ts,
                    check: checks::SIGMA_I,
                    margin,
                });
            }
        }
        let end = ((p.index + 1) * period).min(horizon);
        for t in ts..end {
            let da = traj.a(t) - traj.a(ts);
            let db = traj.b(t) - traj.b(ts);
            if !sigma_d_contains(&da, &db, cfg.lipschitz, period) {
                out.push(Violation {
                    t,
                    check: checks::SIGMA_D,
                    margin: radius + DRIFT_TOL - induced_two_norm(&hstack(&da, &db)),
                });
            }
            let acl = traj.a(t) + traj.b(t) * &p.k;
            let margin = min_eigenvalue(&(&p.p * cfg.lambda - acl.transpose() * &p.p * &acl));
            if margin < -LYAPUNOV_TOL {
                out.push(Violation {
                    t,
                    check: checks::TRUE_LYAPUNOV,
                    margin,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: &'static str,
    pub evaluated: usize,
    pub failed: usize,
    /// Most negative margin among failures, if any.
    pub worst: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub q_trace: Vec<f64>,
    pub pges_bound_trace: Vec<f64>,
    pub violations: Vec<Violation>,
    pub b_bar: f64,
    pub mu: f64,
    pub dwell_ok: bool,
    pub initial_gain_margin: f64,
    /// `min_t (pges(t) − |x(t)|)`.
    pub pges_margin: f64,
    pub checks: Vec<CheckSummary>,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, check: &str) -> usize {
        self.violations.iter().filter(|v| v.check == check).count()
    }
}

/// Runs every check on the state and input sequences of one run.
pub fn analyze(
    cfg: &ControllerConfig,
    traj: &MatrixTrajectory,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    periods: &[PeriodGain],
) -> Result<StabilityReport, AnalysisError> {
    check_periods(periods)?;
    if xs.is_empty() {
        return Err(AnalysisError::Data("empty run".into()));
    }
    let horizon = xs.len() - 1;
    if horizon > traj.horizon() {
        return Err(AnalysisError::Data(format!(
            "run of {horizon} steps exceeds plant horizon {}",
            traj.horizon()
        )));
    }
    let b_bar = input_gain_bound(traj, horizon);
    let mut violations = Vec::new();
    let mut checks_run: Vec<(&'static str, usize)> = Vec::new();

    let p0 = &periods[0];
    let initial_gain_margin = check_initial_gain(traj.a(0), traj.b(0), &p0.k, &p0.p, cfg.lambda);
    if initial_gain_margin < -PSD_TOL {
        violations.push(Violation {
            t: 0,
            check: checks::INITIAL_GAIN,
            margin: initial_gain_margin,
        });
    }
    checks_run.push((checks::INITIAL_GAIN, 1));

    violations.extend(lyapunov_step_check(xs, periods, cfg, b_bar)?);
    checks_run.push((checks::LYAPUNOV_STEP, horizon));

    let q = q_trace(xs, periods, cfg)?;
    violations.extend(q_claims(&q, xs, cfg, b_bar));
    checks_run.push((checks::Q_SANDWICH_LOWER, horizon + 1));
    checks_run.push((checks::Q_SANDWICH_UPPER, horizon + 1));
    checks_run.push((checks::Q_CONSECUTIVE, horizon));

    let x0 = xs[0].norm();
    let bound = (0..=horizon)
        .map(|t| pges_bound(cfg, b_bar, x0, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pges_margin = f64::INFINITY;
    for (t, (b, x)) in bound.iter().zip(xs).enumerate() {
        let m = b - x.norm();
        pges_margin = pges_margin.min(m);
        if m < 0.0 {
            violations.push(Violation {
                t,
                check: checks::PGES_BOUND,
                margin: m,
            });
        }
    }
    checks_run.push((checks::PGES_BOUND, horizon + 1));

    let mu = switch_growth(periods)?;
    let dwell_ok = check_dwell(mu.max(1.0), cfg.lambda, cfg.period);
    if !dwell_ok {
        violations.push(Violation {
            t: 0,
            check: checks::DWELL_TIME,
            margin: cfg.period as f64 + mu.max(1.0).ln() / cfg.lambda.ln(),
        });
    }
    checks_run.push((checks::DWELL_TIME, 1));

    violations.extend(set_membership_audit(xs, us, periods, traj, cfg)?);
    let switches = periods
        .iter()
        .filter(|p| p.index > 0 && p.index * cfg.period <= horizon)
        .count();
    checks_run.push((checks::UNCERTIFIED, switches + 1));
    checks_run.push((checks::SIGMA_I, switches));
    checks_run.push((checks::SIGMA_D, horizon));
    checks_run.push((checks::TRUE_LYAPUNOV, horizon));

    let summaries = checks_run
        .into_iter()
        .map(|(name, evaluated)| {
            let failed: Vec<f64> = violations
                .iter()
                .filter(|v| v.check == name)
                .map(|v| v.margin)
                .collect();
            CheckSummary {
                name,
                evaluated,
                failed: failed.len(),
                worst: failed.iter().copied().filter(|m| !m.is_nan()).reduce(f64::min),
            }
        })
        .collect();

    Ok(StabilityReport {
        q_trace: q,
        pges_bound_trace: bound,
        violations,
        b_bar,
        mu,
        dwell_ok,
        initial_gain_margin,
        pges_margin,
        checks: summaries,
    })
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "stability report")?;
        writeln!(
            f,
            "  B_bar = {:.6e}  (taken as max_t ||B(t)||_2 over the run)",
            self.b_bar
        )?;
        writeln!(
            f,
            "  mu = {:.6e}  dwell condition {}",
            self.mu,
            if self.dwell_ok { "holds" } else { "FAILS" }
        )?;
        writeln!(f, "  initial gain margin = {:.6e}", self.initial_gain_margin)?;
        writeln!(f, "  min(pges bound - |x|) = {:.6e}", self.pges_margin)?;
        for c in &self.checks {
            let worst = c.worst.map_or_else(String::new, |w| format!("  worst margin {w:.3e}"));
            writeln!(
                f,
                "  {:<22} {:>5} evaluated {:>5} failed  {}{}",
                c.name,
                c.evaluated,
                c.failed,
                if c.failed == 0 { "pass" } else { "FAIL" },
                worst
            )?;
        }
        writeln!(f, "  total violations: {}", self.violations.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ControllerConfig {
        ControllerConfig {
            period: 100,
            window: 10,
            lambda: 0.9,
            lambda_hat: 0.91,
            sigma1: 0.001,
            sigma2: 1000.0,
            v_bar: 1e-10,
            lipschitz: 0.0,
            seed: 0,
            k0: DMatrix::zeros(1, 2),
            q0: DMatrix::identity(2, 2),
        }
    }

    #[test]
    fn initial_gain_hand_cases() {
        let z = DMatrix::zeros(2, 1);
        let k = DMatrix::zeros(1, 2);
        let i = DMatrix::identity(2, 2);
        let m = check_initial_gain(&(&i * 0.5), &z, &k, &i, 0.9);
        assert!((m - 0.65).abs() < 1e-14);
        let m = check_initial_gain(&i, &z, &k, &i, 0.9);
        assert!((m + 0.1).abs() < 1e-14);
    }

    #[test]
    fn dwell_threshold() {
        assert!(check_dwell(1.0, 0.9, 1));
        assert!(check_dwell(2.0, 0.9, 7));
        assert!(!check_dwell(2.0, 0.9, 6));
        assert!(!check_dwell(2.0, 1.0 - 1e-12, 1_000_000));
    }

    #[test]
    fn pges_special_cases() {
        let mut c = cfg();
        c.v_bar = 0.0;
        let b = pges_bound(&c, 3.0, 2.0, 40).unwrap();
        assert!((b - 1000.0 / 0.001f64.sqrt() * 0.91f64.powf(20.0) * 2.0).abs() < 1e-9 * b);
        let c = cfg();
        let offset = pges_bound(&c, 3.0, 0.0, 0).unwrap();
        let expect = 1e6f64.sqrt() / (1.0 - 0.91f64.sqrt()) * (0.91f64 / 0.9).powi(50) * 3.0 * 1e-10;
        assert!((offset - expect).abs() < 1e-12 * expect);
        let mut bad = cfg();
        bad.lambda_hat = 1.0;
        assert!(matches!(
            pges_bound(&bad, 1.0, 1.0, 0),
            Err(AnalysisError::Parameter(_))
        ));
    }

    #[test]
    fn q_at_switch_instant_is_plain_weighted_norm() {
        let c = cfg();
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let periods = vec![PeriodGain {
            index: 0,
            k: DMatrix::zeros(1, 2),
            p: p.clone(),
            certified: true,
        }];
        let x = DVector::from_row_slice(&[1.0, -2.0]);
        let q = q_trace(std::slice::from_ref(&x), &periods, &c).unwrap();
        assert!((q[0] - (x.transpose() * &p * &x)[(0, 0)].sqrt()).abs() < 1e-12);
    }

    #[test]
    fn switch_growth_of_scaled_p() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mk = |i, p: DMatrix<f64>| PeriodGain {
            index: i,
            k: DMatrix::zeros(1, 2),
            p,
            certified: true,
        };
        let mu = switch_growth(&[mk(0, p.clone()), mk(1, &p * 3.0), mk(2, &p * 1.5)]).unwrap();
        assert!((mu - 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pges_non_increasing_in_time(t in 0usize..5000, x0 in 0.0f64..1e3, b in 0.0f64..10.0) {
            let c = cfg();
            let now = pges_bound(&c, b, x0, t).unwrap();
            let later = pges_bound(&c, b, x0, t + 1).unwrap();
            prop_assert!(later <= now);
        }

        #[test]
        fn closed_form_dominates_unrolled(x0 in 0.0f64..10.0, b in 0.0f64..10.0, v in 0.0f64..1.0, s2 in 1.0f64..1e4) {
            let mut c = cfg();
            c.v_bar = v;
            c.sigma2 = s2;
            let unrolled = unrolled_bound(&c, b, x0, 400);
            for (t, u) in unrolled.iter().enumerate() {
                let closed = pges_bound(&c, b, x0, t).unwrap();
                prop_assert!(closed >= u * (1.0 - 1e-12), "t = {}", t);
            }
        }

        #[test]
        fn dwell_matches_threshold(mu in 1.0f64..50.0, lambda in 0.05f64..0.99, period in 1usize..500) {
            let threshold = mu.ln() / -lambda.ln();
            prop_assert_eq!(check_dwell(mu, lambda, period), (period as f64) > threshold);
        }
    }
}
