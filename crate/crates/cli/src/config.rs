//! Scenario files: a JSON document with a versioned schema.

use std::fs;
use std::path::{Path, PathBuf};

use heatfreq_core::equilibrium::{pre_disturbance_state, EquilibriumError};
use heatfreq_core::fixtures::Fixture;
use heatfreq_core::solver::{SimParams, SolverError};
use heatfreq_core::{validate, CombinedSystem, Disturbance, DisturbanceSchedule, Model, ModelError, ValidationReport};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metadata;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// JSON syntax or schema violation; `path` is the offending key path.
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("validation failed:\n{0}")]
    Invalid(ValidationReport),
    #[error("invalid sim parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no pre-disturbance equilibrium: {0}")]
    Initial(#[from] EquilibriumError),
}

/// How the run is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Rest point under the loads in effect at `t = 0`.
    #[default]
    Equilibrium,
    /// All deviations zero, line angles at their configured `eta0`.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Used by `simulate` when `--out` is absent, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// Keep every n-th sample in the CSV; the last sample is always kept.
    #[serde(default = "one")]
    pub decimation: usize,
}

fn one() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            directory: None,
            decimation: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: CombinedSystem,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ScenarioConfig {
    pub fn from_fixture(f: &Fixture) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: Some(f.name.to_string()),
            system: f.system.clone(),
            disturbances: f.schedule.steps().to_vec(),
            initial: InitialState::Equilibrium,
            sim: SimParams {
                t_end: f.t_end,
                ..SimParams::default()
            },
            outputs: OutputSpec::default(),
        }
    }

    pub fn schedule(&self) -> DisturbanceSchedule {
        DisturbanceSchedule::new(self.disturbances.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and schema-checks a config document. Errors name the key path.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::Version {
            found: cfg.schema_version,
        });
    }
    Ok(cfg)
}

/// Reads a config file, or the config embedded in a run's `metadata.txt`.
pub fn read_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match metadata::embedded_config(&text) {
        Some(json) => parse_config(json),
        None => parse_config(&text),
    }
}

/// A config that passed every check, compiled into a model.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Model,
    pub schedule: DisturbanceSchedule,
    /// Warnings, plus the overridden errors of a forced load.
    pub report: ValidationReport,
    pub forced: bool,
}

impl Scenario {
    /// Validates `config`. With `force`, parameter errors are tolerated but
    /// structural ones (broken references, flow imbalance) still fail.
    pub fn build(config: ScenarioConfig, force: bool) -> Result<Self, ConfigError> {
        let report = validate(&config.system);
        if report.has_errors() && (!force || report.has_structural_errors()) {
            return Err(ConfigError::Invalid(report));
        }
        config.sim.validate().map_err(|e| match e {
            SolverError::InvalidParams(m) => ConfigError::Params(m),
            other => ConfigError::Params(other.to_string()),
        })?;
        if config.outputs.decimation == 0 {
            return Err(ConfigError::Params("outputs.decimation must be >= 1".into()));
        }
        let forced = report.has_errors();
        let model = if forced {
            Model::new_unchecked(config.system.clone())?
        } else {
            Model::new(config.system.clone())?
        };
        let schedule = config.schedule();
        model.check_schedule(&schedule)?;
        Ok(Self {
            config,
            model,
            schedule,
            report,
            forced,
        })
    }

    pub fn initial_state(&self) -> Result<DVector<f64>, ConfigError> {
        Ok(match self.config.initial {
            InitialState::Equilibrium => pre_disturbance_state(&self.model, &self.schedule)?,
            InitialState::Zero => self.model.initial_state(),
        })
    }

    pub fn label(&self) -> &str {
        self.config.name.as_deref().unwrap_or("scenario")
    }
}

/// [`read_config`] followed by [`Scenario::build`].
pub fn load_config(path: &Path, force: bool) -> Result<Scenario, ConfigError> {
    Scenario::build(read_config(path)?, force)
}

#[cfg(test)]
mod tests {
    use super::*;
    use heatfreq_core::fixtures;

    #[test]
    fn fixture_round_trips() {
        let cfg = ScenarioConfig::from_fixture(&fixtures::f1_mode1_fixture());
        let back = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let mut v: serde_json::Value = serde_json::from_str(
            &ScenarioConfig::from_fixture(&fixtures::f1_mode1_fixture()).to_json(),
        )
        .unwrap();
        v["system"]["buses"][1]["colour"] = "red".into();
        let err = parse_config(&v.to_string()).unwrap_err();
        match err {
            ConfigError::Schema { path, message } => {
                assert_eq!(path, "system.buses[1].colour");
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn version_is_checked() {
        let mut cfg = ScenarioConfig::from_fixture(&fixtures::f1_mode1_fixture());
        cfg.schema_version = 7;
        assert!(matches!(parse_config(&cfg.to_json()), Err(ConfigError::Version { found: 7 })));
    }

    #[test]
    fn defaults_fill_in() {
        let mut v: serde_json::Value = serde_json::from_str(
            &ScenarioConfig::from_fixture(&fixtures::f1_mode1_fixture()).to_json(),
        )
        .unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("sim");
        obj.remove("outputs");
        obj.remove("initial");
        let cfg = parse_config(&v.to_string()).unwrap();
        assert_eq!(cfg.sim, SimParams::default());
        assert_eq!(cfg.outputs.decimation, 1);
        assert_eq!(cfg.initial, InitialState::Equilibrium);
    }

    #[test]
    fn force_only_overrides_parameter_errors() {
        let mut cfg = ScenarioConfig::from_fixture(&fixtures::f1_mode1_fixture());
        cfg.system.buses[0].damping = -1.0;
        assert!(matches!(Scenario::build(cfg.clone(), false), Err(ConfigError::Invalid(_))));
        assert!(Scenario::build(cfg.clone(), true).unwrap().forced);
        cfg.system.lines[0].to = "nowhere".into();
        assert!(matches!(Scenario::build(cfg, true), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_disturbance_target() {
        let mut cfg = ScenarioConfig::from_fixture(&fixtures::f1_mode1_fixture());
        cfg.disturbances[0].id = "b9".into();
        assert!(matches!(Scenario::build(cfg, false), Err(ConfigError::Model(_))));
    }
}
