//! Model configuration and its JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::StatsSource;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::matching::MatchConfig;
use crate::pyramid::{num_levels, PyramidConfig};
use crate::swin::StgConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub uf: usize,
    pub channels: usize,
    pub stg: StgConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub sab_stats_source: StatsSource,
    pub global_residual: bool,
    pub loss: LossWeights,
    pub seed: u64,
    /// One set of branch weights for target-LR, reference-LR and reference.
    pub share_stg_weights: bool,
    /// One residual block after each pyramid downsampling step.
    pub pyramid_level_rstb: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            uf: 4,
            channels: 32,
            stg: StgConfig::default(),
            matching: MatchConfig::default(),
            sab_stats_source: StatsSource::Pre,
            global_residual: true,
            loss: LossWeights::default(),
            seed: 0,
            share_stg_weights: false,
            pyramid_level_rstb: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.uf != 2 && self.uf != 4 {
            return Err(Error::config(format!("uf must be 2 or 4, got {}", self.uf)));
        }
        if self.channels != self.stg.embed_dim {
            return Err(Error::config(format!(
                "channels ({}) must equal stg.embed_dim ({})",
                self.channels, self.stg.embed_dim
            )));
        }
        self.stg.validate()?;
        self.matching.validate()
    }

    pub fn num_levels(&self) -> Result<usize> {
        num_levels(self.uf)
    }

    pub fn pyramid(&self) -> PyramidConfig {
        PyramidConfig { uf: self.uf, stg: self.stg, level_rstb: self.pyramid_level_rstb }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
