//! Versioned JSON schema for episode files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_fleet, ChargerSpec, Episode};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;

/// Where an episode came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: Option<u64>,
    /// Index of the sample within its batch, if any.
    pub sample: Option<usize>,
    /// Day index within the billing period for daily splits.
    pub day: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeFile {
    pub schema_version: u32,
    pub chargers: Vec<ChargerSpec>,
    pub episode: Episode,
    pub provenance: Provenance,
}

impl EpisodeFile {
    pub fn new(chargers: Vec<ChargerSpec>, episode: Episode, provenance: Provenance) -> Self {
        Self { schema_version: EPISODE_SCHEMA_VERSION, chargers, episode, provenance }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EPISODE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "episode schema version {} (expected {EPISODE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        validate_fleet(&self.chargers)?;
        self.episode.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parse and validate.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: EpisodeFile = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }
}
