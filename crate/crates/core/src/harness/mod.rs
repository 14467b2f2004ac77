//! Scenario loading, closed-loop simulation and CSV run logs.

mod log;
mod scenario;

use thiserror::Error;

pub use log::{emit_csv, LogHeader, LogRow, RunLog};
pub use scenario::{
    scenario_paper_lti, scenario_paper_ltv, ControllerSpec, KeyframeSpec, PlantSpec, RunMode, Scenario, ScenarioFile,
};

use crate::analysis::{analyze, AnalysisError, StabilityReport};
use crate::controller::{Controller, ControllerError, GainUpdate, PeriodGain, StepMode, RNG_ALGORITHM};
use crate::plant::{step, PlantError, PlantState};
use crate::sdp::SdpBackend;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("io: {0}")]
    Io(String),
    #[error("malformed log: {0}")]
    Log(String),
}

/// Log plus the controller's synthesis record.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub updates: Vec<GainUpdate>,
    /// Gain in force for each period; a single entry in static mode.
    pub periods: Vec<PeriodGain>,
}

/// Simulates `sc` for `horizon` steps and records `horizon + 1` rows. The
/// last row holds `x(horizon)` and the input the controller would issue.
pub fn run(sc: &Scenario, backend: Box<dyn SdpBackend>) -> Result<RunOutcome, ScenarioError> {
    let header = LogHeader {
        scenario: sc.name.clone(),
        scenario_sha256: sc.hash(),
        mode: sc.mode.as_str().to_string(),
        seed: sc.cfg.seed,
        backend: backend.id().to_string(),
        rng: RNG_ALGORITHM.to_string(),
        version: TOOL_VERSION.to_string(),
    };
    let mut ctl = Controller::new(sc.cfg.clone(), backend)?;
    let mut state = PlantState::new(sc.x0.clone());
    let mut rows = Vec::with_capacity(sc.horizon + 1);
    for t in 0..=sc.horizon {
        let (u, mode, gain_index, status) = match sc.mode {
            RunMode::Oddac => {
                let o = ctl.control_step(&state.x)?;
                (o.u, o.mode, o.gain_index, o.status)
            }
            RunMode::StaticK0 => (&sc.cfg.k0 * &state.x, StepMode::Plain, 0, None),
        };
        rows.push(LogRow {
            t,
            x: state.x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            norm_x: state.x.norm(),
            mode: mode.as_str().to_string(),
            gain_index,
            solver_status: status.map_or_else(String::new, |s| s.as_str().to_string()),
        });
        if t < sc.horizon {
            state = step(&sc.plant, &state, &u)?;
        }
    }
    let (updates, periods) = match sc.mode {
        RunMode::Oddac => (ctl.updates().to_vec(), ctl.periods().to_vec()),
        RunMode::StaticK0 => (Vec::new(), ctl.periods()[..1].to_vec()),
    };
    Ok(RunOutcome {
        log: RunLog { header, rows },
        updates,
        periods,
    })
}

/// Runs the stability analysis on a finished run of `sc`.
pub fn analyze_run(sc: &Scenario, log: &RunLog, periods: &[PeriodGain]) -> Result<StabilityReport, AnalysisError> {
    analyze(&sc.cfg, &sc.plant, &log.states(), &log.inputs(), periods)
}
