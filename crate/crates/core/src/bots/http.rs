use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use tracing::warn;
use ureq::Agent;

use super::{Bot, BotContext, BotError, BotResponse, DEFAULT_DEADLINE};

#[derive(Deserialize)]
struct Reply {
    text: Option<String>,
    #[serde(default)]
    confidence: Option<f64>,
}

/// Out-of-process bot reached by `POST {base}/respond`.
#[derive(Clone, Debug)]
pub struct HttpBot {
    url: String,
    agent: Agent,
}

impl HttpBot {
    pub fn new(endpoint: &str) -> Self {
        Self::with_timeout(endpoint, DEFAULT_DEADLINE)
    }

    pub fn with_timeout(endpoint: &str, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/respond") {
            base.to_string()
        } else {
            format!("{base}/respond")
        };
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { url, agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Bot for HttpBot {
    fn respond(&self, ctx: &BotContext, _rng: &mut ChaCha8Rng) -> Result<BotResponse, BotError> {
        let fail = |e: ureq::Error| {
            warn!(url = %self.url, error = %e, "bot endpoint failed");
            BotError::Transport(e.to_string())
        };
        let mut resp = self.agent.post(&self.url).send_json(ctx).map_err(fail)?;
        let reply: Reply = resp
            .body_mut()
            .read_json()
            .map_err(|e| BotError::BadReply(e.to_string()))?;
        Ok(BotResponse {
            text: reply.text,
            confidence: reply.confidence,
        })
    }
}
