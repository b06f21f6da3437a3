//! Orchestration engine for a crowd and chatbot hybrid conversational
//! assistant.
//!
//! User messages are answered by candidate responses proposed by human
//! workers and pluggable chatbots. Candidates are accepted by weighted
//! voting; the engine learns which chatbots to call, reuses past crowd
//! answers through nearest-neighbour retrieval, and casts automatic upvotes
//! when a classifier is confident enough.

pub mod bots;
pub mod conversation;
pub mod embedding;
pub mod engine;
pub mod event;
pub mod orchestrator;
pub mod phase;
pub mod retrieval;
pub mod reward;
pub mod selector;
pub mod sim;
pub mod time;
pub mod voter;
pub mod voting;

pub use conversation::{
    Conversation, ConversationId, Message, MessageId, MessageState, Polarity, Role, Vote, VoterKind,
};
pub use embedding::{MessageVector, VectorTable};
pub use engine::{Engine, EngineError, Proposal};
pub use event::{Event, EventKind};
pub use phase::{BotPolicy, PhaseConfig};
pub use selector::{BetaShape, BotProfile, Selector};
pub use time::{Clock, SystemClock, Timestamp, VirtualClock};
pub use voting::{RewardLedger, RewardSchema, VoteOutcome, VoteWeights};
