//! Discrete-time linear time-varying plant `x(t+1) = A(t) x(t) + B(t) u(t)`.
//!
//! Matrix trajectories are stored densely, one `(A(t), B(t))` pair per time
//! step for `t = 0..=horizon`. Keyframed trajectories are interpolated entry by
//! entry with a shape-preserving piecewise-cubic Hermite rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{hstack, induced_two_norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid keyframes: {0}")]
    Keyframe(String),
    #[error("time {t} outside trajectory horizon {horizon}")]
    Horizon { t: usize, horizon: usize },
}

/// One `(t, A, B)` anchor of a keyframed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub t: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySource {
    Keyframes(Vec<Keyframe>),
    Constant { a: DMatrix<f64>, b: DMatrix<f64> },
    Explicit,
}

/// Time-indexed `(A(t), B(t))` for `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTrajectory {
    a_seq: Vec<DMatrix<f64>>,
    b_seq: Vec<DMatrix<f64>>,
    source: TrajectorySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub t: usize,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, t: 0 }
    }
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>, n: usize, m: usize) -> Result<(), PlantError> {
    if a.nrows() != n || a.ncols() != n {
        return Err(PlantError::Dimension(format!(
            "A is {}x{}, expected {n}x{n}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != n || b.ncols() != m {
        return Err(PlantError::Dimension(format!(
            "B is {}x{}, expected {n}x{m}",
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

impl MatrixTrajectory {
    /// The same pair at every step.
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>, horizon: usize) -> Result<Self, PlantError> {
        check_pair(&a, &b, a.nrows(), b.ncols())?;
        Ok(Self {
            a_seq: vec![a.clone(); horizon + 1],
            b_seq: vec![b.clone(); horizon + 1],
            source: TrajectorySource::Constant { a, b },
        })
    }

    /// Wraps caller-provided sequences (`horizon + 1` entries each).
    pub fn explicit(a_seq: Vec<DMatrix<f64>>, b_seq: Vec<DMatrix<f64>>) -> Result<Self, PlantError> {
        if a_seq.is_empty() || a_seq.len() != b_seq.len() {
            return Err(PlantError::Dimension(format!(
                "explicit trajectory needs equal non-empty sequences, got {} and {}",
                a_seq.len(),
                b_seq.len()
            )));
        }
        let (n, m) = (a_seq[0].nrows(), b_seq[0].ncols());
        for (a, b) in a_seq.iter().zip(&b_seq) {
            check_pair(a, b, n, m)?;
        }
        Ok(Self {
            a_seq,
            b_seq,
            source: TrajectorySource::Explicit,
        })
    }

    pub fn horizon(&self) -> usize {
        self.a_seq.len() - 1
    }

    pub fn n(&self) -> usize {
        self.a_seq[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.b_seq[0].ncols()
    }

    pub fn source(&self) -> &TrajectorySource {
        &self.source
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a_seq[t]
    }

    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b_seq[t]
    }

    /// `[A(t), B(t)]`.
    pub fn ab(&self, t: usize) -> DMatrix<f64> {
        hstack(&self.a_seq[t], &self.b_seq[t])
    }

    /// `sup_t ‖B(t)‖₂` over the stored horizon.
    pub fn max_input_gain(&self) -> f64 {
        self.b_seq.iter().map(induced_two_norm).fold(0.0, f64::max)
    }
}

/// Fritsch–Carlson style derivative estimates for a monotone cubic Hermite
/// interpolant (harmonic-mean interior slopes, one-sided three-point ends).
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let k = xs.len();
    if k == 2 {
        let d = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        return vec![d, d];
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..k - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut d = vec![0.0; k];
    for i in 1..k - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
    d[k - 1] = edge_slope(h[k - 2], h[k - 3], delta[k - 2], delta[k - 3]);
    d
}

fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let s = (x - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * d1
}

/// Builds a trajectory by entry-wise shape-preserving cubic interpolation
/// through the keyframes. A single keyframe yields a constant trajectory.
pub fn make_keyframe_trajectory(keyframes: &[Keyframe], horizon: usize) -> Result<MatrixTrajectory, PlantError> {
    let first = keyframes
        .first()
        .ok_or_else(|| PlantError::Keyframe("no keyframes".into()))?;
    let (n, m) = (first.a.nrows(), first.b.ncols());
    for kf in keyframes {
        check_pair(&kf.a, &kf.b, n, m)?;
    }
    if first.t != 0 {
        return Err(PlantError::Keyframe(format!(
            "first keyframe at t = {}, expected 0",
            first.t
        )));
    }
    if keyframes.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(PlantError::Keyframe(
            "keyframe times must be strictly increasing".into(),
        ));
    }
    if keyframes.len() == 1 {
        let mut traj = MatrixTrajectory::constant(first.a.clone(), first.b.clone(), horizon)?;
        traj.source = TrajectorySource::Keyframes(keyframes.to_vec());
        return Ok(traj);
    }
    let last = keyframes.last().expect("non-empty").t;
    if last < horizon {
        return Err(PlantError::Keyframe(format!(
            "last keyframe at t = {last} does not cover horizon {horizon}"
        )));
    }

    let xs: Vec<f64> = keyframes.iter().map(|k| k.t as f64).collect();
    let width = n + m;
    let stacked: Vec<DMatrix<f64>> = keyframes.iter().map(|k| hstack(&k.a, &k.b)).collect();
    let mut out = vec![DMatrix::zeros(n, width); horizon + 1];
    let mut ys = vec![0.0; keyframes.len()];
    for i in 0..n {
        for j in 0..width {
            for (y, s) in ys.iter_mut().zip(&stacked) {
                *y = s[(i, j)];
            }
            let d = pchip_slopes(&xs, &ys);
            let mut seg = 0;
            for (t, mat) in out.iter_mut().enumerate() {
                let tf = t as f64;
                while seg + 2 < xs.len() && tf > xs[seg + 1] {
                    seg += 1;
                }
                mat[(i, j)] = if let Some(idx) = keyframes.iter().position(|k| k.t == t) {
                    ys[idx]
                } else {
                    hermite(xs[seg], xs[seg + 1], ys[seg], ys[seg + 1], d[seg], d[seg + 1], tf)
                };
            }
        }
    }
    let a_seq = out.iter().map(|s| s.columns(0, n).into_owned()).collect();
    let b_seq = out.iter().map(|s| s.columns(n, m).into_owned()).collect();
    Ok(MatrixTrajectory {
        a_seq,
        b_seq,
        source: TrajectorySource::Keyframes(keyframes.to_vec()),
    })
}

/// Advances the plant one step under input `u`.
pub fn step(traj: &MatrixTrajectory, state: &PlantState, u: &DVector<f64>) -> Result<PlantState, PlantError> {
    if state.t >= traj.horizon() {
        return Err(PlantError::Horizon {
            t: state.t,
            horizon: traj.horizon(),
        });
    }
    if state.x.len() != traj.n() || u.len() != traj.m() {
        return Err(PlantError::Dimension(format!(
            "state has {} entries and input {}, plant is n = {}, m = {}",
            state.x.len(),
            u.len(),
            traj.n(),
            traj.m()
        )));
    }
    let x = traj.a(state.t) * &state.x + traj.b(state.t) * u;
    Ok(PlantState { x, t: state.t + 1 })
}

/// Largest consecutive-step variation `‖[A(t+1) − A(t), B(t+1) − B(t)]‖₂`.
///
/// Over integer times the triangle inequality makes this a valid Lipschitz
/// constant for every pair `(t, s)`.
pub fn estimate_lipschitz(traj: &MatrixTrajectory) -> f64 {
    (0..traj.horizon())
        .map(|t| {
            let da = traj.a(t + 1) - traj.a(t);
            let db = traj.b(t + 1) - traj.b(t);
            induced_two_norm(&hstack(&da, &db))
        })
        .fold(0.0, f64::max)
}
