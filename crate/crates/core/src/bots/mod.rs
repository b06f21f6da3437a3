//! Chatbot plugin contract and the built-in bots.

mod filler;
mod http;
mod registry;
mod retrieval;
mod utility;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{Conversation, ConversationId, MessageState, Role};
use crate::time::Timestamp;

pub use filler::{FillerBot, DEFAULT_FILLERS};
pub use http::HttpBot;
pub use registry::{BotKind, BotSpec, BuildContext, Registry, RegistryError};
pub use retrieval::RetrievalBot;
pub use utility::{
    City, FixtureRestaurants, FixtureWeather, Gazetteer, ProviderError, Restaurant, RestaurantBot,
    RestaurantProvider, WeatherBot, WeatherProvider, WeatherReport, RESTAURANT_FALLBACK,
    WEATHER_FALLBACK,
};

pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(5);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub role: Role,
    pub text: String,
    pub state: MessageState,
    pub timestamp: Timestamp,
}

/// What a bot sees: the chat log so far and the message to answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BotContext {
    pub conversation_id: ConversationId,
    pub messages: Vec<ContextEntry>,
    pub user_message: String,
}

impl BotContext {
    /// Builds the context for `conv`; `None` when no user has spoken yet.
    pub fn from_conversation(conv: &Conversation) -> Option<Self> {
        let user_message = conv.latest_user_message()?.text.clone();
        let messages = conv
            .messages
            .iter()
            .map(|m| ContextEntry {
                role: m.role,
                text: m.text.clone(),
                state: m.state,
                timestamp: m.created_at,
            })
            .collect();
        Some(Self {
            conversation_id: conv.id,
            messages,
            user_message,
        })
    }

    /// A single-message context, handy for tests and offline tools.
    pub fn single(user_message: &str) -> Self {
        Self {
            conversation_id: ConversationId(0),
            messages: vec![ContextEntry {
                role: Role::User,
                text: user_message.to_string(),
                state: MessageState::Accepted,
                timestamp: Timestamp(0),
            }],
            user_message: user_message.to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BotResponse {
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl BotResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            confidence: None,
        }
    }

    pub fn decline() -> Self {
        Self::default()
    }
}

#[derive(Debug, Error)]
pub enum BotError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("bad reply: {0}")]
    BadReply(String),
}

pub trait Bot: Send + Sync {
    fn respond(&self, ctx: &BotContext, rng: &mut ChaCha8Rng) -> Result<BotResponse, BotError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclineReason {
    NoResponse,
    EmptyText,
    Timeout,
    Panicked,
    Failed(String),
}

impl DeclineReason {
    pub fn label(&self) -> String {
        match self {
            DeclineReason::NoResponse => "no_response".into(),
            DeclineReason::EmptyText => "empty_text".into(),
            DeclineReason::Timeout => "timeout".into(),
            DeclineReason::Panicked => "panicked".into(),
            DeclineReason::Failed(e) => format!("failed: {e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BotReply {
    Text {
        text: String,
        confidence: Option<f64>,
    },
    Declined(DeclineReason),
}

fn normalize(result: Result<BotResponse, BotError>) -> BotReply {
    match result {
        Ok(BotResponse { text: None, .. }) => BotReply::Declined(DeclineReason::NoResponse),
        Ok(BotResponse {
            text: Some(t),
            confidence,
        }) => {
            if t.trim().is_empty() {
                BotReply::Declined(DeclineReason::EmptyText)
            } else {
                BotReply::Text {
                    text: t,
                    confidence,
                }
            }
        }
        Err(e) => BotReply::Declined(DeclineReason::Failed(e.to_string())),
    }
}

/// Calls the bot on the current thread. Panics become declines.
pub fn invoke(bot: &dyn Bot, ctx: &BotContext, seed: u64) -> BotReply {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match catch_unwind(AssertUnwindSafe(|| bot.respond(ctx, &mut rng))) {
        Ok(r) => normalize(r),
        Err(_) => BotReply::Declined(DeclineReason::Panicked),
    }
}

/// Calls the bot on a helper thread and gives up after `deadline`.
pub fn invoke_with_deadline(
    bot: Arc<dyn Bot>,
    ctx: Arc<BotContext>,
    seed: u64,
    deadline: Duration,
) -> BotReply {
    let (tx, rx) = mpsc::channel();
    let spawned = thread::Builder::new()
        .name("bot-invoke".into())
        .spawn(move || {
            let _ = tx.send(invoke(bot.as_ref(), &ctx, seed));
        });
    if let Err(e) = spawned {
        return BotReply::Declined(DeclineReason::Failed(e.to_string()));
    }
    match rx.recv_timeout(deadline) {
        Ok(reply) => reply,
        Err(mpsc::RecvTimeoutError::Timeout) => BotReply::Declined(DeclineReason::Timeout),
        Err(mpsc::RecvTimeoutError::Disconnected) => BotReply::Declined(DeclineReason::Panicked),
    }
}

/// Invokes several bots concurrently, each with its own deadline. Replies
/// come back in input order.
pub fn invoke_all(
    calls: Vec<(Arc<dyn Bot>, u64)>,
    ctx: Arc<BotContext>,
    deadline: Duration,
) -> Vec<BotReply> {
    let handles: Vec<_> = calls
        .into_iter()
        .map(|(bot, seed)| {
            let ctx = Arc::clone(&ctx);
            thread::spawn(move || invoke_with_deadline(bot, ctx, seed, deadline))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| {
            h.join()
                .unwrap_or(BotReply::Declined(DeclineReason::Panicked))
        })
        .collect()
}
