//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::rho_grid;
use crate::domain::{make_sat_plant, make_scalar_plant, NoiseSpec, PlantSpec, StochasticEnv};
use crate::runtime::{ClosedLoop, Controller, InitialState};

use super::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PlantConfig {
    /// Two-state saturated plant.
    #[default]
    Sat,
    /// `x+ = a x + u`, `kappa(x) = -gain x`.
    Scalar { a: f64, gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub q: f64,
    pub p: Vec<f64>,
    /// Defaults to `p.len() - 1`.
    #[serde(default)]
    pub capacity: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            q: 0.4,
            p: vec![0.2; 5],
            capacity: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    None,
    Gaussian { std: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    Gaussian { std: f64 },
    Fixed { x: Vec<f64> },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Gaussian { std: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo: 0.01,
            hi: 0.99,
            points: 181,
        }
    }
}

impl GridConfig {
    pub fn values(&self) -> Vec<f64> {
        rho_grid(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaConfig {
    pub samples: u64,
    pub tv_threshold: f64,
    /// Analytic pmf is truncated once the remaining mass drops below this.
    pub tail_mass: f64,
}

impl Default for DeltaConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            tv_threshold: 0.01,
            tail_mass: 1e-6,
        }
    }
}

pub const DEFAULT_TRIALS: u64 = 10_000;

pub fn default_d_sweep() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
}

fn default_controllers() -> Vec<Controller> {
    vec![Controller::Baseline, Controller::Anytime]
}

fn default_horizon() -> usize {
    50
}

/// Everything one CLI run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub env: EnvConfig,
    /// Trigger radius for `simulate`.
    #[serde(default)]
    pub d: f64,
    /// Trigger radii for `montecarlo`.
    #[serde(default = "default_d_sweep")]
    pub d_sweep: Vec<f64>,
    #[serde(default = "default_controllers")]
    pub controllers: Vec<Controller>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// `montecarlo` defaults to [`DEFAULT_TRIALS`]; `simulate` needs 1.
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Overrides the plant's open-loop factor in `analyze`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Overrides the plant's closed-loop factor in `analyze`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub rho_grid: GridConfig,
    #[serde(default)]
    pub delta: DeltaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.stochastic_env()?;
        let plant = self.base_plant()?;
        if let Some(t) = self.trials {
            if t < 1 {
                return Err(field_err("trials", "must be at least 1"));
            }
        }
        if self.horizon < 1 {
            return Err(field_err("horizon", "must be at least 1"));
        }
        if !self.d.is_finite() || self.d < 0.0 {
            return Err(field_err("d", "must be finite and nonnegative"));
        }
        if self.d_sweep.is_empty() {
            return Err(field_err("d_sweep", "must not be empty"));
        }
        for (i, w) in self.d_sweep.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(field_err(&format!("d_sweep[{i}]"), "must be finite and nonnegative"));
            }
        }
        if self.d_sweep.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field_err("d_sweep", "values must be strictly increasing"));
        }
        if self.controllers.is_empty() {
            return Err(field_err("controllers", "must not be empty"));
        }
        match &self.noise {
            NoiseConfig::Gaussian { std } if std.len() != plant.state_dim => {
                return Err(field_err(
                    "noise.std",
                    format!("needs {} entries, got {}", plant.state_dim, std.len()),
                ));
            }
            NoiseConfig::Gaussian { std } if std.iter().any(|s| !s.is_finite() || *s < 0.0) => {
                return Err(field_err("noise.std", "entries must be finite and nonnegative"));
            }
            _ => {}
        }
        match &self.initial {
            InitialConfig::Fixed { x } if x.len() != plant.state_dim => {
                return Err(field_err(
                    "initial.x",
                    format!("needs {} entries, got {}", plant.state_dim, x.len()),
                ));
            }
            InitialConfig::Gaussian { std } if !std.is_finite() || *std < 0.0 => {
                return Err(field_err("initial.std", "must be finite and nonnegative"));
            }
            _ => {}
        }
        if let Some(rho) = self.rho {
            if !(0.0..1.0).contains(&rho) {
                return Err(field_err("rho", "must lie in [0, 1)"));
            }
        }
        let g = &self.rho_grid;
        if g.points < 1 || !(0.0..1.0).contains(&g.lo) || !(0.0..1.0).contains(&g.hi) || g.hi < g.lo {
            return Err(field_err("rho_grid", "needs points >= 1 and 0 <= lo <= hi < 1"));
        }
        if self.delta.samples < 1 {
            return Err(field_err("delta.samples", "must be at least 1"));
        }
        if !(self.delta.tail_mass > 0.0 && self.delta.tail_mass < 1.0) {
            return Err(field_err("delta.tail_mass", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn stochastic_env(&self) -> Result<StochasticEnv, CliError> {
        let env = StochasticEnv {
            q: self.env.q,
            capacity: self
                .env
                .capacity
                .unwrap_or(self.env.p.len().saturating_sub(1)),
            p: self.env.p.clone(),
        };
        crate::domain::validate_env(&env).map_err(|e| field_err("env", e))?;
        Ok(env)
    }

    /// Plant with trigger radius 0.
    pub fn base_plant(&self) -> Result<PlantSpec, CliError> {
        match self.plant {
            PlantConfig::Sat => Ok(make_sat_plant()),
            PlantConfig::Scalar { a, gain } => {
                make_scalar_plant(a, gain, 0.0).map_err(|e| field_err("plant", e))
            }
        }
    }

    pub fn plant_with_radius(&self, d: f64) -> Result<PlantSpec, CliError> {
        self.base_plant()?
            .with_trigger_radius(d)
            .map_err(|e| field_err("d", e))
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        match &self.noise {
            NoiseConfig::None => NoiseSpec::None,
            NoiseConfig::Gaussian { std } => NoiseSpec::GaussianIid { std: std.clone() },
        }
    }

    pub fn initial_state(&self) -> InitialState {
        match &self.initial {
            InitialConfig::Gaussian { std } => InitialState::Gaussian { std: *std },
            InitialConfig::Fixed { x } => InitialState::Fixed(x.clone()),
        }
    }

    pub fn closed_loop(&self, d: f64) -> Result<ClosedLoop, CliError> {
        ClosedLoop::new(
            self.plant_with_radius(d)?,
            self.stochastic_env()?,
            self.noise_spec(),
            self.initial_state(),
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.d_sweep, default_d_sweep());
        assert_eq!(cfg.horizon, 50);
        assert_eq!(cfg.rho_grid.values().len(), 181);
    }

    #[test]
    fn unknown_keys_fail_with_position() {
        let err = ExperimentConfig::from_json("{\n  \"horizon\": 5,\n  \"bogus\": 1\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_nested_keys_fail() {
        assert!(ExperimentConfig::from_json(r#"{"env": {"q": 0.5, "p": [0.5, 0.5], "x": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"plant": {"kind": "scalar", "a": 2, "gain": 1.5, "c": 0}}"#).is_err());
    }

    #[test]
    fn bad_sweep_is_reported_by_field() {
        let err = ExperimentConfig::from_json(r#"{"d_sweep": [0, 2, 1]}"#).unwrap_err();
        assert!(err.to_string().contains("d_sweep"));
        let err = ExperimentConfig::from_json(r#"{"d_sweep": [-1, 2]}"#).unwrap_err();
        assert!(err.to_string().contains("d_sweep[0]"));
    }

    #[test]
    fn bad_env_is_reported() {
        let err = ExperimentConfig::from_json(r#"{"env": {"q": 1.2, "p": [0.5, 0.5]}}"#).unwrap_err();
        assert!(err.to_string().contains("env"));
        let err = ExperimentConfig::from_json(r#"{"env": {"q": 0.5, "p": [0.5, 0.5], "capacity": 3}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("capacity"));
    }

    #[test]
    fn zero_trials_and_horizon_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"trials": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"horizon": 0}"#).is_err());
    }

    #[test]
    fn noise_dimension_checked() {
        let err = ExperimentConfig::from_json(r#"{"noise": {"kind": "gaussian", "std": [1.0]}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("noise.std"));
    }
}
