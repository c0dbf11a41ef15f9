use amdiff_core::diffusion::{ModelConfig, SampleConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run reads from its JSON config file. Missing fields take
/// their defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    /// Intermediate checkpoint interval in steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Minimum corpus count for a motif to enter the vocabulary.
    pub min_freq: usize,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: amdiff_core::diffusion::DiffusionError| CliError::Config(e.to_string());
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.sample.validate().map_err(wrap)?;
        if self.min_freq == 0 {
            return Err(CliError::Config("min_freq must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            checkpoint_every: 0,
            min_freq: 1,
        }
    }
}
