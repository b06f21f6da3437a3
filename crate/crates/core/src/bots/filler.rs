use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Bot, BotContext, BotError, BotResponse};

pub const DEFAULT_FILLERS: [&str; 13] = [
    "Is there anything else I can help you with?",
    "Thanks",
    "I don't know",
    "You're welcome!",
    "Okay",
    "Sure",
    "Let me check on that for you.",
    "Could you tell me a bit more?",
    "That sounds great!",
    "Sorry to hear that.",
    "Good luck!",
    "Hello! How can I help you today?",
    "Have a nice day!",
];

/// Answers with a uniformly drawn line from a fixed list, ignoring context.
#[derive(Clone, Debug)]
pub struct FillerBot {
    fillers: Vec<String>,
}

impl FillerBot {
    pub fn new(fillers: Vec<String>) -> Self {
        Self { fillers }
    }

    pub fn fillers(&self) -> &[String] {
        &self.fillers
    }
}

impl Default for FillerBot {
    fn default() -> Self {
        Self::new(DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect())
    }
}

impl Bot for FillerBot {
    fn respond(&self, _ctx: &BotContext, rng: &mut ChaCha8Rng) -> Result<BotResponse, BotError> {
        if self.fillers.is_empty() {
            return Ok(BotResponse::decline());
        }
        let i = rng.random_range(0..self.fillers.len());
        Ok(BotResponse::text(self.fillers[i].clone()))
    }
}
