//! Semidefinite feasibility over `(Q, L, α₁, α₂)`.
//!
//! Callers describe affine PSD constraints in a [`FeasibilityProgram`]; a
//! backend implementing [`SdpBackend`] maximizes a uniform margin `s` with
//! every constraint `⪰ s·I`. [`solve`] turns the backend output into a
//! [`GainCertificate`] and [`verify`] re-checks it without touching the backend.

mod barrier;
mod program;
mod verify;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use barrier::{BarrierBackend, BACKEND_ID as BARRIER_BACKEND_ID};
pub use program::{AffineSymMatrix, FeasibilityProgram, PsdConstraint, VariableLayout, ALPHA_UPPER, MARGIN_CAP};
pub use verify::{verify, ResidualEntry, VerificationReport};

use crate::linalg::spd_inverse;

/// A point is accepted as feasible when its margin is at least `-MARGIN_ACCEPT`.
pub const MARGIN_ACCEPT: f64 = 1e-9;

/// Residual tolerance used by independent verification.
pub const VERIFY_TOL: f64 = 1e-6;

/// Environment variable naming the SDP backend.
pub const BACKEND_ENV: &str = "ODDAC_SDP_BACKEND";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("malformed program: {0}")]
    Program(String),
    #[error("unknown SDP backend '{0}'")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    SolverFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::SolverFailure => "solver_failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "feasible" => Some(SolveStatus::Feasible),
            "infeasible" => Some(SolveStatus::Infeasible),
            "solver_failure" => Some(SolveStatus::SolverFailure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendOutcome {
    /// Barrier gap closed to tolerance.
    Converged,
    /// Centering could not make progress.
    Stalled,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct BackendOutput {
    /// Decision vector (multipliers in scaled units).
    pub y: DVector<f64>,
    /// Margin attained at `y`.
    pub margin: f64,
    /// Upper bound on the optimal margin.
    pub margin_upper_bound: f64,
    pub outcome: BackendOutcome,
    pub newton_steps: usize,
}

/// Narrow interface every backend implements. Implementations must be re-entrant.
pub trait SdpBackend: Send + Sync {
    fn id(&self) -> &str;
    fn solve(&self, program: &FeasibilityProgram) -> Result<BackendOutput, SolverError>;
}

pub fn backend_by_name(name: &str) -> Result<Box<dyn SdpBackend>, SolverError> {
    match name {
        "barrier" | BARRIER_BACKEND_ID => Ok(Box::new(BarrierBackend::default())),
        other => Err(SolverError::UnknownBackend(other.to_string())),
    }
}

/// Backend named by `ODDAC_SDP_BACKEND`, defaulting to the barrier method.
pub fn backend_from_env() -> Result<Box<dyn SdpBackend>, SolverError> {
    match std::env::var(BACKEND_ENV) {
        Ok(name) if !name.trim().is_empty() => backend_by_name(name.trim()),
        _ => backend_by_name("barrier"),
    }
}

/// Solver output with the derived gain `K = L Q⁻¹` and Lyapunov matrix `P = Q⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCertificate {
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub a1: f64,
    pub a2: f64,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Max-margin value found by the backend.
    pub margin: f64,
    pub margin_upper_bound: f64,
    /// Minimum eigenvalue of every program constraint at the returned point.
    pub residuals: Vec<(String, f64)>,
    pub status: SolveStatus,
    /// Whether a multiplier sits at its upper bound.
    pub alpha_at_bound: [bool; 2],
    pub backend: String,
    pub newton_steps: usize,
}

impl GainCertificate {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }

    /// Smallest per-constraint residual.
    pub fn min_residual(&self) -> f64 {
        self.residuals.iter().map(|(_, r)| *r).fold(f64::INFINITY, f64::min)
    }
}

/// Runs `backend` on `program` and classifies the result.
pub fn solve(program: &FeasibilityProgram, backend: &dyn SdpBackend) -> Result<GainCertificate, SolverError> {
    program.validate()?;
    let out = backend.solve(program)?;
    let lay = program.layout;
    let q = lay.unpack_q(&out.y);
    let l = lay.unpack_l(&out.y);
    let [sa1, sa2] = lay.unpack_alpha(&out.y);
    let a1 = sa1 / program.alpha_scale[0];
    let a2 = sa2 / program.alpha_scale[1];

    let p = spd_inverse(&q);
    let mut status = if out.margin >= -MARGIN_ACCEPT {
        SolveStatus::Feasible
    } else if out.margin_upper_bound < -MARGIN_ACCEPT {
        SolveStatus::Infeasible
    } else {
        SolveStatus::SolverFailure
    };
    if status == SolveStatus::Feasible && p.is_none() {
        status = SolveStatus::SolverFailure;
    }
    let p = p.unwrap_or_else(|| DMatrix::zeros(lay.n, lay.n));
    let k = &l * &p;
    let residuals = program
        .constraints
        .iter()
        .map(|c| (c.name.clone(), crate::linalg::min_eigenvalue(&c.expr.eval(&out.y))))
        .collect();
    let near = |v: f64| v >= 0.999 * program.alpha_upper;
    Ok(GainCertificate {
        q,
        l,
        a1,
        a2,
        k,
        p,
        margin: out.margin,
        margin_upper_bound: out.margin_upper_bound,
        residuals,
        status,
        alpha_at_bound: [near(sa1), near(sa2)],
        backend: backend.id().to_string(),
        newton_steps: out.newton_steps,
    })
}
