//! Deployment phase configuration.

use serde::{Deserialize, Serialize};

use crate::voting::VoteWeights;

/// How many chatbots are invoked per scheduler tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum BotPolicy {
    /// One registered bot chosen uniformly at random, no learning.
    RandomOne,
    /// The selector's top-ranked bot plus `n_random` uniform draws from the rest.
    TopPlusRandom { n_random: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub name: String,
    pub chatbot_tick_seconds: u64,
    pub bot_policy: BotPolicy,
    pub vote_bot_enabled: bool,
    /// Human upvotes a bot-origin candidate needs before it can be accepted.
    pub min_human_upvotes_bot_msg: u32,
    pub auto_vote_threshold: f64,
    pub weights: VoteWeights,
    /// Share of conversations that get bots and the vote bot (A/B split).
    pub automation_fraction: f64,
    pub max_workers: u32,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self::phase2()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhaseError {
    #[error("chatbot tick must be positive")]
    ZeroTick,
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("vote weights must be strictly positive")]
    NonPositiveWeights,
    #[error("max_workers must be positive")]
    ZeroWorkers,
    #[error("unknown phase preset {0:?}")]
    UnknownPreset(String),
}

impl PhaseConfig {
    pub fn phase1() -> Self {
        Self {
            name: "phase1".into(),
            chatbot_tick_seconds: 30,
            bot_policy: BotPolicy::RandomOne,
            vote_bot_enabled: true,
            min_human_upvotes_bot_msg: 1,
            auto_vote_threshold: 0.7,
            weights: VoteWeights::default(),
            automation_fraction: 1.0,
            max_workers: 5,
        }
    }

    pub fn phase2() -> Self {
        Self {
            name: "phase2".into(),
            chatbot_tick_seconds: 10,
            bot_policy: BotPolicy::TopPlusRandom { n_random: 1 },
            vote_bot_enabled: true,
            min_human_upvotes_bot_msg: 2,
            auto_vote_threshold: 0.7,
            weights: VoteWeights::default(),
            automation_fraction: 0.5,
            max_workers: 5,
        }
    }

    pub fn preset(name: &str) -> Result<Self, PhaseError> {
        match name {
            "phase1" | "1" => Ok(Self::phase1()),
            "phase2" | "2" => Ok(Self::phase2()),
            other => Err(PhaseError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        if self.chatbot_tick_seconds == 0 {
            return Err(PhaseError::ZeroTick);
        }
        for (name, value) in [
            ("automation_fraction", self.automation_fraction),
            ("auto_vote_threshold", self.auto_vote_threshold),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(PhaseError::OutOfUnitRange { name, value });
            }
        }
        if !self.weights.is_valid() {
            return Err(PhaseError::NonPositiveWeights);
        }
        if self.max_workers == 0 {
            return Err(PhaseError::ZeroWorkers);
        }
        Ok(())
    }

    pub fn bots_per_tick(&self) -> usize {
        match self.bot_policy {
            BotPolicy::RandomOne => 1,
            BotPolicy::TopPlusRandom { n_random } => 1 + n_random,
        }
    }
}
