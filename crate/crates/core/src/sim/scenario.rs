use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bots::BotKind;
use crate::orchestrator::SelectorConfig;
use crate::phase::{PhaseConfig, PhaseError};
use crate::voting::RewardSchema;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("scenario toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// How a simulated worker behaves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerPolicy {
    pub worker_id: String,
    /// Probability of upvoting a good candidate and of downvoting a bad one.
    pub p_correct: f64,
    /// Probability of proposing an answer to each user message.
    pub propose_prob: f64,
    /// Probability that a proposal is good.
    pub p_good_proposal: f64,
    /// Probability of voting at all on another participant's candidate.
    pub vote_prob: f64,
    pub propose_latency_secs: (f64, f64),
    pub vote_latency_secs: (f64, f64),
    pub join_secs: f64,
    pub leave_secs: Option<f64>,
    /// Proposal texts, used in order and cycled. Empty means generated.
    pub script: Vec<String>,
}

impl Default for WorkerPolicy {
    fn default() -> Self {
        Self {
            worker_id: "w1".into(),
            p_correct: 0.9,
            propose_prob: 0.5,
            p_good_proposal: 0.8,
            vote_prob: 1.0,
            propose_latency_secs: (5.0, 20.0),
            vote_latency_secs: (2.0, 8.0),
            join_secs: 0.0,
            leave_secs: None,
            script: Vec::new(),
        }
    }
}

impl WorkerPolicy {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (name, p) in [
            ("p_correct", self.p_correct),
            ("propose_prob", self.propose_prob),
            ("p_good_proposal", self.p_good_proposal),
            ("vote_prob", self.vote_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ScenarioError::Invalid(format!(
                    "{}: {name} must be in [0, 1]",
                    self.worker_id
                )));
            }
        }
        for (lo, hi) in [self.propose_latency_secs, self.vote_latency_secs] {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(ScenarioError::Invalid(format!(
                    "{}: latencies need 0 <= min <= max",
                    self.worker_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTurn {
    /// Seconds after the conversation starts.
    pub at_secs: f64,
    pub text: String,
    #[serde(default)]
    pub topic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConversationScript {
    pub user_id: String,
    pub start_secs: f64,
    /// `None` uses the phase's seeded A/B split.
    pub automation: Option<bool>,
    pub messages: Vec<UserTurn>,
    pub workers: Vec<WorkerPolicy>,
}

impl Default for ConversationScript {
    fn default() -> Self {
        Self {
            user_id: "u1".into(),
            start_secs: 0.0,
            automation: None,
            messages: Vec::new(),
            workers: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimBotKind {
    Filler {
        #[serde(default)]
        fillers: Option<Vec<String>>,
    },
    Chorus {
        #[serde(default = "two")]
        k: usize,
    },
    Interview {
        pairs: PathBuf,
        #[serde(default = "three")]
        k: usize,
    },
    Weather,
    Restaurant,
    /// Replies with the text mapped to the first matching keyword.
    Scripted {
        #[serde(default)]
        replies: BTreeMap<String, String>,
        #[serde(default)]
        default_reply: Option<String>,
    },
}

fn two() -> usize {
    2
}

fn three() -> usize {
    3
}

impl SimBotKind {
    pub fn builtin(&self) -> Option<BotKind> {
        Some(match self {
            SimBotKind::Filler { fillers } => BotKind::Filler {
                fillers: fillers.clone(),
            },
            SimBotKind::Chorus { k } => BotKind::Chorus { k: *k },
            SimBotKind::Interview { pairs, k } => BotKind::Interview {
                pairs: pairs.clone(),
                k: *k,
            },
            SimBotKind::Weather => BotKind::Weather,
            SimBotKind::Restaurant => BotKind::Restaurant,
            SimBotKind::Scripted { .. } => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimBot {
    pub bot_id: String,
    #[serde(flatten)]
    pub kind: SimBotKind,
    #[serde(default)]
    pub example_messages: Vec<String>,
    /// Topics on which this bot's answers count as good.
    #[serde(default)]
    pub good_topics: Vec<String>,
    #[serde(default)]
    pub always_good: bool,
}

impl SimBot {
    pub fn is_good_for(&self, topic: Option<&str>) -> bool {
        self.always_good || topic.is_some_and(|t| self.good_topics.iter().any(|g| g == t))
    }
}

/// A reproducible simulated deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_secs: f64,
    pub phase_preset: String,
    pub phase: Option<PhaseConfig>,
    pub rewards: RewardSchema,
    pub selector: SelectorConfig,
    /// Inline embedding table; ignored when `embedding_path` is set.
    pub embedding: BTreeMap<String, Vec<f64>>,
    pub embedding_dim: usize,
    pub embedding_path: Option<PathBuf>,
    pub voter_model_path: Option<PathBuf>,
    pub idle_timeout_secs: u64,
    pub bots: Vec<SimBot>,
    pub conversations: Vec<ConversationScript>,
    /// Topic to the bot that should rank first for it.
    pub topic_bots: BTreeMap<String, String>,
    /// User messages per evaluation window in the selector report.
    pub window_size: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 0,
            duration_secs: 600.0,
            phase_preset: "phase2".into(),
            phase: None,
            rewards: RewardSchema::default(),
            selector: SelectorConfig::default(),
            embedding: BTreeMap::new(),
            embedding_dim: 2,
            embedding_path: None,
            voter_model_path: None,
            idle_timeout_secs: 600,
            bots: Vec::new(),
            conversations: Vec::new(),
            topic_bots: BTreeMap::new(),
            window_size: 20,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Loads by extension (`.toml`, otherwise JSON). Relative paths resolve
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut s = if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)?
        } else {
            Self::from_json(&text)?
        };
        if let Some(dir) = path.parent() {
            for p in [&mut s.embedding_path, &mut s.voter_model_path]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            for b in &mut s.bots {
                if let SimBotKind::Interview { pairs, .. } = &mut b.kind {
                    if pairs.is_relative() {
                        *pairs = dir.join(&*pairs);
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn phase_config(&self) -> Result<PhaseConfig, ScenarioError> {
        let p = match &self.phase {
            Some(p) => p.clone(),
            None => PhaseConfig::preset(&self.phase_preset)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.phase_config()?;
        if self.duration_secs.is_nan() || self.duration_secs <= 0.0 {
            return Err(ScenarioError::Invalid(
                "duration_secs must be positive".into(),
            ));
        }
        let mut ids = std::collections::BTreeSet::new();
        for b in &self.bots {
            if !ids.insert(&b.bot_id) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate bot {}",
                    b.bot_id
                )));
            }
        }
        for c in &self.conversations {
            let mut workers = std::collections::BTreeSet::new();
            for w in &c.workers {
                w.validate()?;
                if !workers.insert(&w.worker_id) {
                    return Err(ScenarioError::Invalid(format!(
                        "duplicate worker {} in one conversation",
                        w.worker_id
                    )));
                }
            }
            if c.messages
                .iter()
                .any(|m| m.at_secs.is_nan() || m.at_secs < 0.0 || m.text.trim().is_empty())
            {
                return Err(ScenarioError::Invalid(
                    "user turns need at_secs >= 0 and non-empty text".into(),
                ));
            }
        }
        for v in self.embedding.values() {
            if v.len() != self.embedding_dim {
                return Err(ScenarioError::Invalid(format!(
                    "embedding vectors must have {} values",
                    self.embedding_dim
                )));
            }
        }
        Ok(())
    }
}
