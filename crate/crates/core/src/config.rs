//! JSON configuration. Every key is optional; missing keys take defaults and
//! unknown keys are rejected.
//!
//! ```json
//! {
//!   "schedule": { "beta_min": 0.1, "beta_max": 20.0, "t_eps": 0.001, "num_steps": 1000, "grid_kind": "uniform_t" },
//!   "growth":   { "num_axes": 100, "sphere_radius": 0.05, "method": "euler" },
//!   "stats":    { "ttest": "welch", "carlini": { "alpha": 0.5, "n_neighbors": 50 } },
//!   "oracle":   { "mc": { "draws": 10000 }, "toy": { "samples": 2 } },
//!   "score":    { "top_k": null },
//!   "output":   { "checkpoints": null, "full_series": false }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::growth::GrowthConfig;
use crate::oracle::{McConfig, ToyConfig};
use crate::schedule::Schedule;
use crate::stats::{CarliniConfig, TTestKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub ttest: TTestKind,
    pub carlini: CarliniConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub mc: McConfig,
    pub toy: ToyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Keep only the K nearest mixture terms. Off by default.
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// 1-based steps written to growth CSVs; `None` means `{1, 10, 100, T}`.
    pub checkpoints: Option<Vec<usize>>,
    pub full_series: bool,
}

impl OutputConfig {
    /// Sorted, de-duplicated checkpoints clipped to `1..=steps`.
    pub fn checkpoints_for(&self, steps: usize) -> Vec<usize> {
        if self.full_series {
            return (1..=steps).collect();
        }
        let mut c = self.checkpoints.clone().unwrap_or_else(|| vec![1, 10, 100, steps]);
        c.retain(|&s| (1..=steps).contains(&s));
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schedule: Schedule,
    pub growth: GrowthConfig,
    pub stats: StatsConfig,
    pub oracle: OracleConfig,
    pub score: ScoreConfig,
    pub output: OutputConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Cross-section checks that serde alone cannot express.
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        if let Some(d) = dim {
            self.growth.validate(d, &self.schedule)?;
        }
        self.stats.carlini.validate()?;
        if self.score.top_k == Some(0) {
            return Err(Error::domain("score.top_k must be at least 1"));
        }
        Ok(())
    }
}
