//! Conversations, participants and the candidate-message lifecycle.
//!
//! A [`Conversation`] is a pure projection of the event log: it changes only
//! through [`Conversation::apply`]. Validation helpers (`check_*`) are used by
//! the engine before an event is persisted.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::event::{Event, EventKind};
use crate::phase::PhaseConfig;
use crate::time::Timestamp;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ConversationId(pub u64);

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct MessageId(pub u64);

impl fmt::Display for ConversationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Worker,
    Bot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageState {
    Proposed,
    Accepted,
    Expired,
}

impl MessageState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, MessageState::Proposed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoterKind {
    Human,
    Machine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub voter_id: String,
    pub voter_kind: VoterKind,
    pub polarity: Polarity,
    pub cast_at: Timestamp,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub conversation_id: ConversationId,
    pub author: String,
    pub role: Role,
    pub text: String,
    pub state: MessageState,
    pub votes: Vec<Vote>,
    pub created_at: Timestamp,
    pub resolved_at: Option<Timestamp>,
    pub origin_bot: Option<String>,
    /// Active workers when the message was proposed; frozen for its lifetime.
    pub active_workers: u32,
    /// Turn the message belongs to (1-based; 0 before the first user message).
    pub turn: u32,
    pub created_seq: u64,
    pub resolved_seq: Option<u64>,
}

impl Message {
    pub fn is_user(&self) -> bool {
        self.role == Role::User
    }

    pub fn has_voted(&self, voter_id: &str) -> bool {
        self.votes.iter().any(|v| v.voter_id == voter_id)
    }

    /// State as it stood just before event `seq` was applied.
    pub fn state_before(&self, seq: u64) -> Option<MessageState> {
        if self.created_seq >= seq {
            return None;
        }
        match self.resolved_seq {
            Some(r) if r < seq => Some(self.state),
            _ if self.is_user() => Some(MessageState::Accepted),
            _ => Some(MessageState::Proposed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub worker_id: String,
    pub joined_at: Timestamp,
    pub left_at: Option<Timestamp>,
}

impl RosterEntry {
    pub fn active_at(&self, at: Timestamp) -> bool {
        self.joined_at <= at && self.left_at.is_none_or(|left| at < left)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub author: String,
    pub text: String,
    pub added_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: ConversationId,
    pub user_id: String,
    pub phase: PhaseConfig,
    pub automation_enabled: bool,
    pub messages: Vec<Message>,
    pub roster: Vec<RosterEntry>,
    pub turn_index: u32,
    pub facts: Vec<Fact>,
    pub opened_at: Timestamp,
    pub last_activity: Timestamp,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConversationError {
    #[error("conversation {0} is closed")]
    Closed(ConversationId),
    #[error("message text must not be empty")]
    EmptyText,
    #[error("role {0:?} cannot propose responses")]
    InvalidRole(Role),
    #[error("unknown author {0:?}")]
    UnknownAuthor(String),
    #[error("unknown message {0}")]
    UnknownMessage(MessageId),
    #[error("message {id} cannot move from {from:?} to {to:?}")]
    InvalidTransition {
        id: MessageId,
        from: MessageState,
        to: MessageState,
    },
    #[error("{voter} already voted on {id}")]
    DuplicateVote { id: MessageId, voter: String },
    #[error("worker {0:?} is already active")]
    AlreadyActive(String),
    #[error("conversation is at its worker limit ({0})")]
    Full(u32),
    #[error("bot-origin messages need an origin bot id")]
    MissingOriginBot,
    #[error("event does not belong to conversation {0}")]
    WrongConversation(ConversationId),
}

impl Conversation {
    pub fn new(
        id: ConversationId,
        user_id: impl Into<String>,
        phase: PhaseConfig,
        automation_enabled: bool,
        opened_at: Timestamp,
    ) -> Self {
        Self {
            id,
            user_id: user_id.into(),
            phase,
            automation_enabled,
            messages: Vec::new(),
            roster: Vec::new(),
            turn_index: 0,
            facts: Vec::new(),
            opened_at,
            last_activity: opened_at,
            closed: false,
        }
    }

    /// Number of workers whose membership interval covers `at`.
    pub fn active_worker_count(&self, at: Timestamp) -> u32 {
        self.roster.iter().filter(|r| r.active_at(at)).count() as u32
    }

    pub fn is_active_worker(&self, worker_id: &str) -> bool {
        self.roster
            .iter()
            .any(|r| r.worker_id == worker_id && r.left_at.is_none())
    }

    pub fn currently_active(&self) -> u32 {
        self.roster.iter().filter(|r| r.left_at.is_none()).count() as u32
    }

    pub fn message(&self, id: MessageId) -> Option<&Message> {
        self.messages.iter().find(|m| m.id == id)
    }

    fn message_mut(&mut self, id: MessageId) -> Result<&mut Message, ConversationError> {
        self.messages
            .iter_mut()
            .find(|m| m.id == id)
            .ok_or(ConversationError::UnknownMessage(id))
    }

    pub fn proposed(&self) -> impl Iterator<Item = &Message> {
        self.messages
            .iter()
            .filter(|m| m.state == MessageState::Proposed)
    }

    /// The most recent user message, if any.
    pub fn latest_user_message(&self) -> Option<&Message> {
        self.messages.iter().rev().find(|m| m.is_user())
    }

    /// The user message that opened `turn` (turns are 1-based).
    pub fn turn_opener(&self, turn: u32) -> Option<&Message> {
        self.messages.iter().find(|m| m.is_user() && m.turn == turn)
    }

    pub fn messages_in_turn(&self, turn: u32) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.turn == turn)
    }

    pub fn check_open(&self) -> Result<(), ConversationError> {
        if self.closed {
            Err(ConversationError::Closed(self.id))
        } else {
            Ok(())
        }
    }

    pub fn check_text(text: &str) -> Result<(), ConversationError> {
        if text.trim().is_empty() {
            Err(ConversationError::EmptyText)
        } else {
            Ok(())
        }
    }

    pub fn check_proposal(
        &self,
        author: &str,
        role: Role,
        text: &str,
        origin_bot: Option<&str>,
    ) -> Result<(), ConversationError> {
        self.check_open()?;
        Self::check_text(text)?;
        match role {
            Role::User => Err(ConversationError::InvalidRole(role)),
            Role::Worker => {
                if self.is_active_worker(author) {
                    Ok(())
                } else {
                    Err(ConversationError::UnknownAuthor(author.to_string()))
                }
            }
            Role::Bot => origin_bot
                .map(|_| ())
                .ok_or(ConversationError::MissingOriginBot),
        }
    }

    pub fn check_accept(&self, id: MessageId) -> Result<(), ConversationError> {
        let msg = self
            .message(id)
            .ok_or(ConversationError::UnknownMessage(id))?;
        if msg.state != MessageState::Proposed {
            return Err(ConversationError::InvalidTransition {
                id,
                from: msg.state,
                to: MessageState::Accepted,
            });
        }
        Ok(())
    }

    /// Folds one event into the conversation. Events for other conversations
    /// and global events are rejected; the caller routes them.
    pub fn apply(&mut self, event: &Event) -> Result<(), ConversationError> {
        if event.kind.conversation_id() != Some(self.id) {
            return Err(ConversationError::WrongConversation(self.id));
        }
        let ts = event.ts;
        match &event.kind {
            EventKind::ConversationOpened { .. } => {}
            EventKind::WorkerJoined { worker_id, .. } => {
                if self.is_active_worker(worker_id) {
                    return Err(ConversationError::AlreadyActive(worker_id.clone()));
                }
                self.roster.push(RosterEntry {
                    worker_id: worker_id.clone(),
                    joined_at: ts,
                    left_at: None,
                });
            }
            EventKind::WorkerLeft { worker_id, .. } => {
                let entry = self
                    .roster
                    .iter_mut()
                    .find(|r| &r.worker_id == worker_id && r.left_at.is_none())
                    .ok_or_else(|| ConversationError::UnknownAuthor(worker_id.clone()))?;
                entry.left_at = Some(ts);
            }
            EventKind::UserMessage {
                message_id, text, ..
            } => {
                self.check_open()?;
                Self::check_text(text)?;
                self.turn_index += 1;
                self.messages.push(Message {
                    id: *message_id,
                    conversation_id: self.id,
                    author: self.user_id.clone(),
                    role: Role::User,
                    text: text.clone(),
                    state: MessageState::Accepted,
                    votes: Vec::new(),
                    created_at: ts,
                    resolved_at: Some(ts),
                    origin_bot: None,
                    active_workers: self.active_worker_count(ts),
                    turn: self.turn_index,
                    created_seq: event.seq,
                    resolved_seq: Some(event.seq),
                });
            }
            EventKind::MessageProposed {
                message_id,
                author,
                role,
                text,
                origin_bot,
                active_workers,
                ..
            } => {
                self.check_proposal(author, *role, text, origin_bot.as_deref())?;
                self.messages.push(Message {
                    id: *message_id,
                    conversation_id: self.id,
                    author: author.clone(),
                    role: *role,
                    text: text.clone(),
                    state: MessageState::Proposed,
                    votes: Vec::new(),
                    created_at: ts,
                    resolved_at: None,
                    origin_bot: origin_bot.clone(),
                    active_workers: *active_workers,
                    turn: self.turn_index,
                    created_seq: event.seq,
                    resolved_seq: None,
                });
            }
            EventKind::VoteCast {
                message_id,
                voter_id,
                voter_kind,
                polarity,
                ..
            } => {
                let msg = self.message_mut(*message_id)?;
                if msg.state != MessageState::Proposed {
                    return Err(ConversationError::InvalidTransition {
                        id: *message_id,
                        from: msg.state,
                        to: msg.state,
                    });
                }
                if msg.has_voted(voter_id) {
                    return Err(ConversationError::DuplicateVote {
                        id: *message_id,
                        voter: voter_id.clone(),
                    });
                }
                msg.votes.push(Vote {
                    voter_id: voter_id.clone(),
                    voter_kind: *voter_kind,
                    polarity: *polarity,
                    cast_at: ts,
                    seq: event.seq,
                });
            }
            EventKind::MessageAccepted { message_id, .. } => {
                self.transition(*message_id, MessageState::Accepted, ts, event.seq)?;
            }
            EventKind::MessageExpired { message_id, .. } => {
                self.transition(*message_id, MessageState::Expired, ts, event.seq)?;
            }
            EventKind::FactAdded { author, text, .. } => {
                self.facts.push(Fact {
                    author: author.clone(),
                    text: text.clone(),
                    added_at: ts,
                });
            }
            EventKind::ConversationClosed { .. } => {
                self.check_open()?;
                self.closed = true;
            }
            EventKind::RewardGranted { .. }
            | EventKind::BotDeclined { .. }
            | EventKind::BotOutcome { .. } => {}
            EventKind::BotRegistered { .. } => unreachable!("filtered by conversation_id"),
        }
        self.last_activity = self.last_activity.max(ts);
        Ok(())
    }

    fn transition(
        &mut self,
        id: MessageId,
        to: MessageState,
        ts: Timestamp,
        seq: u64,
    ) -> Result<(), ConversationError> {
        let msg = self.message_mut(id)?;
        if msg.state != MessageState::Proposed {
            return Err(ConversationError::InvalidTransition {
                id,
                from: msg.state,
                to,
            });
        }
        msg.state = to;
        msg.resolved_at = Some(ts);
        msg.resolved_seq = Some(seq);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(seq: u64, ts: u64, kind: EventKind) -> Event {
        Event {
            seq,
            ts: Timestamp(ts),
            kind,
        }
    }

    fn conv() -> Conversation {
        Conversation::new(
            ConversationId(1),
            "u1",
            PhaseConfig::phase1(),
            true,
            Timestamp(0),
        )
    }

    fn join(c: &mut Conversation, seq: u64, ts: u64, w: &str) {
        c.apply(&ev(
            seq,
            ts,
            EventKind::WorkerJoined {
                conversation_id: c.id,
                worker_id: w.into(),
            },
        ))
        .unwrap();
    }

    #[test]
    fn roster_interval_counting() {
        let mut c = conv();
        join(&mut c, 1, 0, "w1");
        assert_eq!(c.active_worker_count(Timestamp(1)), 1);
        join(&mut c, 2, 50, "w2");
        assert_eq!(c.active_worker_count(Timestamp(10)), 1);
        assert_eq!(c.active_worker_count(Timestamp(60)), 2);
        c.apply(&ev(
            3,
            100,
            EventKind::WorkerLeft {
                conversation_id: c.id,
                worker_id: "w1".into(),
            },
        ))
        .unwrap();
        assert_eq!(c.active_worker_count(Timestamp(100)), 1);
        assert_eq!(c.active_worker_count(Timestamp(99)), 2);
    }

    #[test]
    fn user_message_advances_turn_and_is_accepted() {
        let mut c = conv();
        c.apply(&ev(
            1,
            5,
            EventKind::UserMessage {
                conversation_id: c.id,
                message_id: MessageId(1),
                text: "hi".into(),
            },
        ))
        .unwrap();
        assert_eq!(c.turn_index, 1);
        assert_eq!(c.messages[0].state, MessageState::Accepted);
        assert_eq!(c.turn_opener(1).unwrap().id, MessageId(1));
    }

    #[test]
    fn terminal_states_do_not_transition() {
        let mut c = conv();
        join(&mut c, 1, 0, "w1");
        c.apply(&ev(
            2,
            1,
            EventKind::MessageProposed {
                conversation_id: c.id,
                message_id: MessageId(2),
                author: "w1".into(),
                role: Role::Worker,
                text: "hello".into(),
                origin_bot: None,
                active_workers: 1,
            },
        ))
        .unwrap();
        c.apply(&ev(
            3,
            2,
            EventKind::MessageExpired {
                conversation_id: c.id,
                message_id: MessageId(2),
            },
        ))
        .unwrap();
        let err = c
            .apply(&ev(
                4,
                3,
                EventKind::MessageAccepted {
                    conversation_id: c.id,
                    message_id: MessageId(2),
                },
            ))
            .unwrap_err();
        assert!(matches!(err, ConversationError::InvalidTransition { .. }));
        assert_eq!(c.messages[0].state_before(3), Some(MessageState::Proposed));
        assert_eq!(c.messages[0].state_before(4), Some(MessageState::Expired));
        assert_eq!(c.messages[0].state_before(2), None);
    }

    #[test]
    fn proposal_checks() {
        let c = conv();
        assert_eq!(
            c.check_proposal("u1", Role::User, "x", None),
            Err(ConversationError::InvalidRole(Role::User))
        );
        assert_eq!(
            c.check_proposal("w9", Role::Worker, "x", None),
            Err(ConversationError::UnknownAuthor("w9".into()))
        );
        assert_eq!(
            c.check_proposal("b", Role::Bot, "x", None),
            Err(ConversationError::MissingOriginBot)
        );
        assert_eq!(
            c.check_proposal("b", Role::Bot, "  ", Some("b")),
            Err(ConversationError::EmptyText)
        );
    }
}
