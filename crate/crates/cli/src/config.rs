//! Run configuration file: one TOML document with `[run]`, `[model]`,
//! `[train]`, and `[sim]` sections. Every field has a default; unknown keys
//! are rejected. The resolved configuration is echoed into the run directory
//! so any run can be replayed from its outputs alone.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use forcecast_core::contactsim::SimParams;
use forcecast_core::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// wipe | press | insert
    pub task: String,
    /// Dataset directory (for train) or dataset root with one
    /// subdirectory per task (for ablation).
    pub data: String,
    /// Output directory; empty means `<output root>/<command>-<task>`.
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sim: SimParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Default output root; overridden by the FORCECAST_OUT_ROOT environment
/// variable.
pub fn output_root() -> String {
    std::env::var("FORCECAST_OUT_ROOT").unwrap_or_else(|_| "runs".to_string())
}
