//! Experiment configuration read from TOML. Command-line flags are applied on
//! top, and the effective configuration is what gets hashed into artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topotrack::classify::{ModelKind, TrainConfig};
use topotrack::features::BinningParams;
use topotrack::sim::{
    BehaviorTrainingConfig, IntersectionConfig, MonteCarloConfig, PopulationConfig,
};
use topotrack::tracker::TrackerConfig;
use topotrack::trajectory::SignalKind;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub diagrams: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scans: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    #[default]
    Population,
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub scenario: ScenarioKind,
    /// Number of paths.
    pub n: usize,
    /// Samples per path.
    pub length: usize,
    pub train_fraction: f64,
    /// Angular noise for the intersection scenario; the sensor default when unset.
    pub sigma: Option<f64>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Population,
            n: 1000,
            length: 360,
            train_fraction: 0.7,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub model: ModelKind,
    pub signals: Vec<SignalKind>,
    pub rows: usize,
    pub cols: usize,
    pub augmented: bool,
    /// Train on non-overlapping windows of this many samples instead of whole paths.
    pub window: Option<usize>,
    pub train: TrainConfig,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            model: ModelKind::Logistic,
            signals: vec![SignalKind::Speed],
            rows: 8,
            cols: 8,
            augmented: true,
            window: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Test window lengths; whole paths are always scored as well.
    pub windows: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            windows: vec![5, 10, 15, 20, 25, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub threads: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let d = MonteCarloConfig::default();
        Self {
            sigmas: d.sigmas,
            trials: d.trials,
            threads: d.threads,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub generate: GenerateSection,
    pub population: PopulationConfig,
    pub scenario: IntersectionConfig,
    pub classifier: ClassifierSection,
    /// Fixed binning per signal for `bin`; fitted from the data when absent.
    pub binning: BTreeMap<SignalKind, BinningParams>,
    pub eval: EvalSection,
    pub tracker: TrackerConfig,
    /// Behavior model trained for the Monte Carlo when no model file is given.
    pub training: BehaviorTrainingConfig,
    pub montecarlo: MonteCarloSection,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            sigmas: self.montecarlo.sigmas.clone(),
            trials: self.montecarlo.trials,
            scenario: self.scenario.clone(),
            tracker: self.tracker.clone(),
            threads: self.montecarlo.threads,
        }
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("--seed is required for this command".into()))
    }
}

/// Resolves a path from a flag override or the config, failing with a config error.
pub fn require_path(slot: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    slot.clone().ok_or_else(|| {
        CliError::Config(format!("no {what} path given (flag or [paths] in config)"))
    })
}
