use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ScenarioError;
use crate::controller::ControllerConfig;
use crate::linalg::from_rows;
use crate::plant::{estimate_lipschitz, make_keyframe_trajectory, Keyframe, MatrixTrajectory};

const PAPER_LTV: &str = include_str!("../../presets/paper_ltv.toml");
const PAPER_LTI: &str = include_str!("../../presets/paper_lti.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Oddac,
    /// Fixed `u = K₀x`, no excitation, no solver.
    StaticK0,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Oddac => "oddac",
            RunMode::StaticK0 => "static_k0",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oddac" => Ok(RunMode::Oddac),
            "static" | "static_k0" => Ok(RunMode::StaticK0),
            other => Err(ScenarioError::Invalid(format!("unknown mode '{other}'"))),
        }
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSpec {
    pub t: usize,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSpec {
    Keyframes {
        keyframes: Vec<KeyframeSpec>,
    },
    Constant {
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub period: usize,
    pub window: usize,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub v_bar: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(rename = "K0")]
    pub k0: Rows,
    #[serde(rename = "Q0")]
    pub q0: Rows,
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub horizon: usize,
    #[serde(default)]
    pub mode: RunMode,
    pub x0: Vec<f64>,
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub plant: MatrixTrajectory,
    pub x0: DVector<f64>,
    pub cfg: ControllerConfig,
    pub horizon: usize,
    pub mode: RunMode,
    /// Source description with the Lipschitz constant resolved.
    pub file: ScenarioFile,
}

fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    from_rows(rows).ok_or_else(|| ScenarioError::Invalid(format!("{what} is not a rectangular non-empty matrix")))
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn build(mut self) -> Result<Scenario, ScenarioError> {
        let plant = match &self.plant {
            PlantSpec::Constant { a, b } => MatrixTrajectory::constant(matrix(a, "A")?, matrix(b, "B")?, self.horizon)?,
            PlantSpec::Keyframes { keyframes } => {
                let kfs = keyframes
                    .iter()
                    .map(|k| {
                        Ok(Keyframe {
                            t: k.t,
                            a: matrix(&k.a, "keyframe A")?,
                            b: matrix(&k.b, "keyframe B")?,
                        })
                    })
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                let span = kfs.last().map_or(0, |k| k.t).max(self.horizon);
                make_keyframe_trajectory(&kfs, span)?
            }
        };
        let lipschitz = match self.controller.lipschitz {
            Some(l) => l,
            None => estimate_lipschitz(&plant),
        };
        self.controller.lipschitz = Some(lipschitz);
        let c = &self.controller;
        let cfg = ControllerConfig {
            period: c.period,
            window: c.window,
            lambda: c.lambda,
            lambda_hat: c.lambda_hat,
            sigma1: c.sigma1,
            sigma2: c.sigma2,
            v_bar: c.v_bar,
            lipschitz,
            seed: c.seed,
            k0: matrix(&c.k0, "K0")?,
            q0: matrix(&c.q0, "Q0")?,
        };
        cfg.validate()?;
        if cfg.n() != plant.n() || cfg.m() != plant.m() {
            return Err(ScenarioError::Invalid(format!(
                "controller is for n = {}, m = {} but plant has n = {}, m = {}",
                cfg.n(),
                cfg.m(),
                plant.n(),
                plant.m()
            )));
        }
        if self.x0.len() != plant.n() {
            return Err(ScenarioError::Invalid(format!(
                "x0 has {} entries, plant n = {}",
                self.x0.len(),
                plant.n()
            )));
        }
        if self.horizon > plant.horizon() {
            return Err(ScenarioError::Invalid(format!(
                "horizon {} exceeds plant horizon {}",
                self.horizon,
                plant.horizon()
            )));
        }
        Ok(Scenario {
            name: self.name.clone(),
            x0: DVector::from_column_slice(&self.x0),
            horizon: self.horizon,
            mode: self.mode,
            plant,
            cfg,
            file: self,
        })
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        ScenarioFile::parse(text)?.build()
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolves a preset name (`paper-ltv`, `paper-lti`) or a file path.
    pub fn resolve(source: &str) -> Result<Self, ScenarioError> {
        match source {
            "paper-ltv" => Ok(scenario_paper_ltv()),
            "paper-lti" => Ok(scenario_paper_lti()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn with_mode(mut self, mode: RunMode) -> Self {
        self.mode = mode;
        self.file.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.cfg.seed = seed;
        self.file.controller.seed = seed;
        self
    }

    pub fn with_horizon(self, horizon: usize) -> Result<Self, ScenarioError> {
        let mut file = self.file;
        file.horizon = horizon;
        file.build()
    }

    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self, ScenarioError> {
        self.cfg.lipschitz = lipschitz;
        self.cfg.validate()?;
        self.file.controller.lipschitz = Some(lipschitz);
        Ok(self)
    }

    /// Hex SHA-256 of the canonical serialization of the resolved scenario.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.file.to_toml().as_bytes()))
    }
}

/// The drifting five-state benchmark with its initial gain and Lyapunov matrix.
pub fn scenario_paper_ltv() -> Scenario {
    Scenario::from_toml(PAPER_LTV).expect("bundled preset is valid")
}

/// The benchmark plant frozen at its initial matrices.
pub fn scenario_paper_lti() -> Scenario {
    Scenario::from_toml(PAPER_LTI).expect("bundled preset is valid")
}
