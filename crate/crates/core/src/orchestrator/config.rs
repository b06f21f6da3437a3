use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phase::{PhaseConfig, PhaseError};
use crate::selector::{BetaShape, SeenPolicy};
use crate::voting::RewardSchema;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("selector prior: alpha and beta must be positive")]
    Shape,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub seen_policy: SeenPolicy,
}

impl SelectorConfig {
    pub fn shape(&self) -> Result<BetaShape, ConfigError> {
        let d = BetaShape::default();
        BetaShape::new(self.alpha.unwrap_or(d.alpha), self.beta.unwrap_or(d.beta))
            .map_err(|_| ConfigError::Shape)
    }
}

/// Service configuration, read from TOML. Every key is optional.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// seed = 7
/// log_path = "events.jsonl"
/// embedding_path = "glove.6B.200d.txt"
/// registry_path = "bots.json"
/// phase_preset = "phase2"
///
/// [phase]                  # overrides the preset entirely
/// chatbot_tick_seconds = 10
///
/// [rewards]
/// r_upvote = 100
///
/// [selector]
/// seen_policy = "per_user_message"
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub listen: String,
    pub seed: u64,
    pub log_path: Option<PathBuf>,
    pub embedding_path: Option<PathBuf>,
    /// Dimension of the empty table used when no embedding file is given.
    pub embedding_dim: usize,
    pub registry_path: Option<PathBuf>,
    pub voter_model_path: Option<PathBuf>,
    pub chorus_pairs_path: Option<PathBuf>,
    pub gazetteer_path: Option<PathBuf>,
    pub phase_preset: String,
    pub phase: Option<PhaseConfig>,
    pub rewards: RewardSchema,
    pub selector: SelectorConfig,
    pub idle_timeout_secs: u64,
    pub bot_deadline_ms: u64,
    /// Seconds between idle-conversation sweeps in the service.
    pub sweep_interval_secs: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            seed: 0,
            log_path: None,
            embedding_path: None,
            embedding_dim: 50,
            registry_path: None,
            voter_model_path: None,
            chorus_pairs_path: None,
            gazetteer_path: None,
            phase_preset: "phase2".into(),
            phase: None,
            rewards: RewardSchema::default(),
            selector: SelectorConfig::default(),
            idle_timeout_secs: 600,
            bot_deadline_ms: 5000,
            sweep_interval_secs: 5,
        }
    }
}

impl OrchestratorConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.phase_config()?;
        cfg.selector.shape()?;
        Ok(cfg)
    }

    /// Loads a config; relative paths inside resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        for p in [
            &mut self.log_path,
            &mut self.embedding_path,
            &mut self.registry_path,
            &mut self.voter_model_path,
            &mut self.chorus_pairs_path,
            &mut self.gazetteer_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn phase_config(&self) -> Result<PhaseConfig, ConfigError> {
        let phase = match &self.phase {
            Some(p) => p.clone(),
            None => PhaseConfig::preset(&self.phase_preset)?,
        };
        phase.validate()?;
        Ok(phase)
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_secs(self.idle_timeout_secs)
    }

    pub fn bot_deadline(&self) -> Duration {
        Duration::from_millis(self.bot_deadline_ms)
    }
}
