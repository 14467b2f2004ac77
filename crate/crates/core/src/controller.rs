//! Windowed data collection, switching and gain updates.
//!
//! Time is split into periods of length `T`. During the last `T_W` steps of
//! each period the input carries a bounded random excitation and the samples
//! `(x(t), u(t), x(t+1))` are collected. At every switch instant `iT` a new
//! gain is synthesized from that window; if synthesis fails the previous gain
//! is kept and the period is marked uncertified.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{is_positive_definite, spd_inverse};
use crate::lmi::{build_aux_dwell, build_aux_sandwich, build_problem, gain_program};
use crate::sdp::{
    self, verify, FeasibilityProgram, GainCertificate, SdpBackend, SolveStatus, VerificationReport, VERIFY_TOL,
};
use crate::window::DataWindow;

/// Name of the excitation generator, recorded in run logs.
pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Switching period `T`.
    pub period: usize,
    /// Window length `T_W`.
    pub window: usize,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub v_bar: f64,
    pub lipschitz: f64,
    pub seed: u64,
    pub k0: DMatrix<f64>,
    pub q0: DMatrix<f64>,
}

impl ControllerConfig {
    pub fn n(&self) -> usize {
        self.q0.nrows()
    }

    pub fn m(&self) -> usize {
        self.k0.nrows()
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let err = |s: String| Err(ControllerError::Config(s));
        if !(self.lambda > 0.0 && self.lambda <= self.lambda_hat && self.lambda_hat < 1.0) {
            return err(format!(
                "need 0 < lambda <= lambda_hat < 1, got {} and {}",
                self.lambda, self.lambda_hat
            ));
        }
        if !(self.sigma1 > 0.0 && self.sigma1 <= self.sigma2) {
            return err(format!(
                "need 0 < sigma1 <= sigma2, got {} and {}",
                self.sigma1, self.sigma2
            ));
        }
        if self.window == 0 || self.window >= self.period {
            return err(format!(
                "need 1 <= T_W < T, got T_W = {}, T = {}",
                self.window, self.period
            ));
        }
        if !(self.v_bar >= 0.0 && self.v_bar.is_finite()) {
            return err(format!("v_bar = {} must be finite and non-negative", self.v_bar));
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return err(format!(
                "Lipschitz constant {} must be finite and non-negative",
                self.lipschitz
            ));
        }
        let n = self.n();
        if n == 0 || self.m() == 0 || self.k0.ncols() != n || self.q0.ncols() != n {
            return err(format!("K0 is {:?}, Q0 is {:?}", self.k0.shape(), self.q0.shape()));
        }
        if !is_positive_definite(&self.q0) {
            return err("Q0 must be symmetric positive definite".into());
        }
        Ok(())
    }

    /// Whether step `t` falls inside a data window.
    pub fn is_excitation_step(&self, t: usize) -> bool {
        t % self.period >= self.period - self.window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Plain,
    Excite,
    Switch,
}

impl StepMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepMode::Plain => "plain",
            StepMode::Excite => "excite",
            StepMode::Switch => "switch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(StepMode::Plain),
            "excite" => Some(StepMode::Excite),
            "switch" => Some(StepMode::Switch),
            _ => None,
        }
    }
}

/// Outcome of one synthesis attempt at a switch instant.
#[derive(Debug, Clone)]
pub struct GainUpdate {
    /// Index of the period the gain is for.
    pub index: usize,
    pub time: usize,
    pub status: SolveStatus,
    /// Whether the gain was adopted (feasible and independently verified).
    pub accepted: bool,
    pub certificate: Option<GainCertificate>,
    pub verification: Option<VerificationReport>,
    pub program: Option<FeasibilityProgram>,
    /// Set when the program could not be assembled.
    pub error: Option<String>,
}

/// Gain and Lyapunov matrix in force during one period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodGain {
    pub index: usize,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// False when the period runs on a retained gain without a fresh certificate.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub u: DVector<f64>,
    pub mode: StepMode,
    pub gain_index: usize,
    /// Solver status when a gain update ran at this step.
    pub status: Option<SolveStatus>,
}

pub struct Controller {
    cfg: ControllerConfig,
    i: usize,
    t: usize,
    k: DMatrix<f64>,
    q_prev: DMatrix<f64>,
    window: DataWindow,
    pending: Option<(DVector<f64>, DVector<f64>)>,
    updates: Vec<GainUpdate>,
    periods: Vec<PeriodGain>,
    rng: ChaCha20Rng,
    backend: Box<dyn SdpBackend>,
}

impl std::fmt::Debug for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Controller")
            .field("i", &self.i)
            .field("t", &self.t)
            .field("k", &self.k)
            .field("backend", &self.backend.id())
            .finish_non_exhaustive()
    }
}

impl Controller {
    pub fn new(cfg: ControllerConfig, backend: Box<dyn SdpBackend>) -> Result<Self, ControllerError> {
        cfg.validate()?;
        let p0 = spd_inverse(&cfg.q0).ok_or_else(|| ControllerError::Config("Q0 is singular".into()))?;
        let start = cfg.period - cfg.window;
        Ok(Self {
            i: 0,
            t: 0,
            k: cfg.k0.clone(),
            q_prev: cfg.q0.clone(),
            window: DataWindow::new(cfg.window, start),
            pending: None,
            updates: Vec::new(),
            periods: vec![PeriodGain {
                index: 0,
                k: cfg.k0.clone(),
                p: p0,
                certified: true,
            }],
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            backend,
            cfg,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn window_index(&self) -> usize {
        self.i
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Last accepted `Q`.
    pub fn q_prev(&self) -> &DMatrix<f64> {
        &self.q_prev
    }

    pub fn window(&self) -> &DataWindow {
        &self.window
    }

    pub fn updates(&self) -> &[GainUpdate] {
        &self.updates
    }

    pub fn periods(&self) -> &[PeriodGain] {
        &self.periods
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Uniform draw on `[−v̄/√m, v̄/√m]^m`, so `|v|₂ ≤ v̄`. With `v̄ = 0` the
    /// generator is not advanced.
    pub fn excitation(&mut self) -> DVector<f64> {
        let m = self.cfg.m();
        if self.cfg.v_bar == 0.0 {
            return DVector::zeros(m);
        }
        let bound = self.cfg.v_bar / (m as f64).sqrt();
        DVector::from_fn(m, |_, _| self.rng.random_range(-bound..=bound))
    }

    /// Issues `u(t)` for the measured `x(t)` and advances time.
    pub fn control_step(&mut self, x: &DVector<f64>) -> Result<StepOutput, ControllerError> {
        let n = self.cfg.n();
        if x.len() != n {
            return Err(ControllerError::Dimension(format!(
                "state has length {}, expected {n}",
                x.len()
            )));
        }
        if let Some((xp, up)) = self.pending.take() {
            self.window
                .push_sample(xp, up, x.clone())
                .map_err(|e| ControllerError::Dimension(e.to_string()))?;
        }
        let t = self.t;
        let (period, tw) = (self.cfg.period, self.cfg.window);
        let i_new = t / period;
        let out = if t - i_new * period >= period - tw {
            let v = self.excitation();
            let u = &self.k * x + v;
            self.pending = Some((x.clone(), u.clone()));
            StepOutput {
                u,
                mode: StepMode::Excite,
                gain_index: self.i,
                status: None,
            }
        } else if i_new != self.i {
            let status = self.switch_to(i_new);
            StepOutput {
                u: &self.k * x,
                mode: StepMode::Switch,
                gain_index: self.i,
                status: Some(status),
            }
        } else {
            StepOutput {
                u: &self.k * x,
                mode: StepMode::Plain,
                gain_index: self.i,
                status: None,
            }
        };
        self.t += 1;
        Ok(out)
    }

    fn switch_to(&mut self, i_new: usize) -> SolveStatus {
        let update = self.update_gain(i_new);
        let status = update.status;
        if update.accepted {
            let cert = update
                .certificate
                .as_ref()
                .expect("accepted update carries a certificate");
            self.k = cert.k.clone();
            self.q_prev = cert.q.clone();
        }
        let p = spd_inverse(&self.q_prev).unwrap_or_else(|| DMatrix::zeros(self.cfg.n(), self.cfg.n()));
        self.periods.push(PeriodGain {
            index: i_new,
            k: self.k.clone(),
            p,
            certified: update.accepted,
        });
        self.updates.push(update);
        self.i = i_new;
        let start = (i_new + 1) * self.cfg.period - self.cfg.window;
        self.window.reset(start);
        status
    }

    /// Synthesizes the gain for period `index` from the current window.
    /// Never fails; problems are reported through the update's status.
    pub fn update_gain(&self, index: usize) -> GainUpdate {
        let cfg = &self.cfg;
        let failed = |msg: String| GainUpdate {
            index,
            time: self.t,
            status: SolveStatus::SolverFailure,
            accepted: false,
            certificate: None,
            verification: None,
            program: None,
            error: Some(msg),
        };
        let prog = match self.window.build_data_matrices(cfg.lipschitz) {
            Err(e) => return failed(e.to_string()),
            Ok(d) => {
                let built = build_problem(&d, cfg.lambda, cfg.lipschitz, cfg.period).and_then(|p| {
                    let sandwich = build_aux_sandwich(cfg.sigma1, cfg.sigma2, cfg.n())?;
                    let dwell = build_aux_dwell(&self.q_prev, cfg.lambda, cfg.lambda_hat, cfg.period)?;
                    Ok(gain_program(&p, &sandwich, Some(&dwell)))
                });
                match built {
                    Ok(p) => p,
                    Err(e) => return failed(e.to_string()),
                }
            }
        };
        let cert = match sdp::solve(&prog, self.backend.as_ref()) {
            Ok(c) => c,
            Err(e) => return failed(e.to_string()),
        };
        let report = verify(&cert, &prog, VERIFY_TOL);
        let accepted = cert.is_feasible() && report.passed();
        GainUpdate {
            index,
            time: self.t,
            status: cert.status,
            accepted,
            certificate: Some(cert),
            verification: Some(report),
            program: Some(prog),
            error: None,
        }
    }
}
