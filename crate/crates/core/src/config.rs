//! TOML run configuration shared by every command.
//!
//! ```toml
//! rng_seed = 7
//!
//! [world]
//! image_side = 64
//! n_sessions = 6
//! samples_per_session = 500
//! n_distractors = 4
//! noise_sigma = 0.02
//! eye_noise = 0.15
//!
//! [train]
//! learning_rate = 1e-3
//! batch_size = 64
//! epochs = 30
//! [train.model]
//! # ModelConfig keys
//! ```
//!
//! The top-level `rng_seed` is authoritative: it replaces any seed given
//! inside a section.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::SyncOptions;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::training::TrainConfig;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub ransac_iters: usize,
    pub inlier_px: f64,
    pub max_lag_seconds: f64,
    pub min_confidence: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        let s = SyncOptions::default();
        Self {
            ransac_iters: 2000,
            inlier_px: 3.0,
            max_lag_seconds: s.max_lag_seconds,
            min_confidence: s.min_confidence,
        }
    }
}

impl AlignConfig {
    pub fn sync_options(&self) -> SyncOptions {
        SyncOptions {
            max_lag_seconds: self.max_lag_seconds,
            min_confidence: self.min_confidence,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Class table path, relative to the config file.
    #[serde(default)]
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub rng_seed: Option<u64>,
    /// Default run directory when the command line gives none.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub world: Option<WorldConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: Option<EvalOptions>,
    #[serde(default)]
    pub align: Option<AlignConfig>,
    #[serde(default)]
    pub stats: Option<StatsConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(w) = &cfg.world {
            w.validate()?;
        }
        if let Some(t) = &cfg.train {
            t.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn seed(&self, what: &str) -> Result<u64> {
        self.rng_seed
            .ok_or_else(|| Error::Config(format!("rng_seed is required to {what}")))
    }

    /// The `[world]` section with the global seed applied.
    pub fn world(&self) -> Result<WorldConfig> {
        let mut w = self
            .world
            .clone()
            .ok_or_else(|| Error::Config("missing [world] section".into()))?;
        w.rng_seed = self.seed("generate a world")?;
        Ok(w)
    }

    /// The `[train]` section with the global seed applied.
    pub fn train(&self) -> Result<TrainConfig> {
        let mut t = self
            .train
            .clone()
            .ok_or_else(|| Error::Config("missing [train] section".into()))?;
        t.rng_seed = self.seed("train")?;
        Ok(t)
    }

    /// The `[eval]` section (defaults when absent) with the global seed,
    /// or 0 when none is set.
    pub fn eval(&self) -> EvalOptions {
        let mut e = self.eval.clone().unwrap_or_default();
        e.rng_seed = self.rng_seed.unwrap_or(0);
        e
    }

    pub fn align(&self) -> AlignConfig {
        self.align.clone().unwrap_or_default()
    }
}
