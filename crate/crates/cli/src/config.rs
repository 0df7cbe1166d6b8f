use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use v2b_core::datagen::ScenarioSpec;
use v2b_core::rl::DdpgConfig;
use v2b_core::{AssignmentPolicy, Error, ObjectiveWeights};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Number of billing periods to draw.
    pub n: usize,
    /// Also write one file per weekday.
    pub daily: bool,
    /// Relative inflation of the estimated peak.
    pub peak_inflation: f64,
    pub weights: ObjectiveWeights,
    pub assignment: AssignmentPolicy,
    pub scenario: ScenarioSpec,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: 1,
            daily: true,
            peak_inflation: 0.0,
            weights: ObjectiveWeights::default(),
            assignment: AssignmentPolicy::default(),
            scenario: ScenarioSpec::default(),
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> v2b_core::Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !self.peak_inflation.is_finite() || self.peak_inflation < 0.0 {
            return Err(Error::Config("peak_inflation must be finite and >= 0".into()));
        }
        self.weights.validate()?;
        self.scenario.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Directory of training episode files.
    pub train_dir: PathBuf,
    /// Directory of held-out episode files for early stopping.
    #[serde(default)]
    pub held_out_dir: Option<PathBuf>,
    #[serde(default)]
    pub ddpg: DdpgConfig,
}

impl TrainConfig {
    /// Resolve relative directories against the config file's location.
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.train_dir.is_relative() {
            self.train_dir = base.join(&self.train_dir);
        }
        if let Some(dir) = self.held_out_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
    }
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

/// Parse `"λ_S,λ_E,λ_D"`.
pub fn parse_weights(s: &str) -> v2b_core::Result<ObjectiveWeights> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("weights {s:?}: {e}")))?;
    let [lambda_s, lambda_e, lambda_d] = parts[..] else {
        return Err(Error::Config(format!("weights {s:?} need three comma-separated values")));
    };
    let w = ObjectiveWeights { lambda_s, lambda_e, lambda_d };
    w.validate()?;
    Ok(w)
}
