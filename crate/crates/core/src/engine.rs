//! Event-sourced conversation store.
//!
//! [`Engine`] owns every conversation, the reward ledger and the set of
//! registered bots. Each command validates against current state, writes
//! its events to the sink, and only then folds them into memory. Replaying
//! the recorded events through [`Engine::replay`] yields identical state.

use std::collections::BTreeMap;
use std::io;

use crate::conversation::{
    Conversation, ConversationError, ConversationId, MessageId, MessageState, Polarity, Role,
    VoterKind,
};
use crate::event::{CloseReason, Event, EventKind, EventSink, NullSink};
use crate::phase::{PhaseConfig, PhaseError};
use crate::time::Timestamp;
use crate::voting::{
    acceptance_check, grant_rewards_on_accept, upvote_grant, Grant, IgnoreReason, RewardLedger,
    RewardSchema, VoteOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unknown conversation {0}")]
    UnknownConversation(ConversationId),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("failed to persist event: {0}")]
    Persist(#[from] io::Error),
    #[error("bot {0:?} is already registered")]
    DuplicateBot(String),
    #[error("bot {0:?} is not registered")]
    UnknownBot(String),
    #[error("machine voters may only upvote")]
    MachineDownvote,
    #[error("event {seq} cannot be applied: {source}")]
    Corrupt {
        seq: u64,
        #[source]
        source: Box<EngineError>,
    },
}

/// Result of proposing a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub message_id: MessageId,
    pub outcome: VoteOutcome,
}

pub struct Engine {
    conversations: BTreeMap<ConversationId, Conversation>,
    ledger: RewardLedger,
    schema: RewardSchema,
    bots: BTreeMap<String, Vec<String>>,
    events: Vec<Event>,
    sink: Box<dyn EventSink>,
    next_seq: u64,
    next_conversation: u64,
    next_message: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("conversations", &self.conversations.len())
            .field("events", &self.events.len())
            .finish()
    }
}

impl Engine {
    pub fn new(schema: RewardSchema) -> Self {
        Self::with_sink(schema, Box::new(NullSink))
    }

    pub fn with_sink(schema: RewardSchema, sink: Box<dyn EventSink>) -> Self {
        Self {
            conversations: BTreeMap::new(),
            ledger: RewardLedger::default(),
            schema,
            bots: BTreeMap::new(),
            events: Vec::new(),
            sink,
            next_seq: 1,
            next_conversation: 1,
            next_message: 1,
        }
    }

    /// Rebuilds state from a recorded log. New events go to a [`NullSink`]
    /// until [`Engine::set_sink`] is called.
    pub fn replay(schema: RewardSchema, events: &[Event]) -> Result<Self, EngineError> {
        let mut engine = Self::new(schema);
        for event in events {
            engine.apply(event).map_err(|e| EngineError::Corrupt {
                seq: event.seq,
                source: Box::new(e),
            })?;
            engine.events.push(event.clone());
        }
        Ok(engine)
    }

    pub fn set_sink(&mut self, sink: Box<dyn EventSink>) {
        self.sink = sink;
    }

    pub fn schema(&self) -> &RewardSchema {
        &self.schema
    }

    pub fn ledger(&self) -> &RewardLedger {
        &self.ledger
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events with `seq >= from`.
    pub fn events_since(&self, from: u64) -> &[Event] {
        let start = self.events.partition_point(|e| e.seq < from);
        &self.events[start..]
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn conversation(&self, id: ConversationId) -> Result<&Conversation, EngineError> {
        self.conversations
            .get(&id)
            .ok_or(EngineError::UnknownConversation(id))
    }

    pub fn conversations(&self) -> impl Iterator<Item = &Conversation> {
        self.conversations.values()
    }

    pub fn registered_bots(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.bots.iter()
    }

    pub fn is_registered_bot(&self, bot_id: &str) -> bool {
        self.bots.contains_key(bot_id)
    }

    pub fn active_worker_count(
        &self,
        conv: ConversationId,
        at: Timestamp,
    ) -> Result<u32, EngineError> {
        Ok(self.conversation(conv)?.active_worker_count(at))
    }

    fn apply(&mut self, event: &Event) -> Result<(), EngineError> {
        match &event.kind {
            EventKind::BotRegistered {
                bot_id,
                example_messages,
            } => {
                if self.bots.contains_key(bot_id) {
                    return Err(EngineError::DuplicateBot(bot_id.clone()));
                }
                self.bots.insert(bot_id.clone(), example_messages.clone());
            }
            EventKind::ConversationOpened {
                conversation_id,
                user_id,
                phase,
                automation_enabled,
            } => {
                self.conversations.insert(
                    *conversation_id,
                    Conversation::new(
                        *conversation_id,
                        user_id.clone(),
                        phase.clone(),
                        *automation_enabled,
                        event.ts,
                    ),
                );
                self.next_conversation = self.next_conversation.max(conversation_id.0 + 1);
            }
            other => {
                let id = other.conversation_id().expect("conversation-scoped event");
                let conv = self
                    .conversations
                    .get_mut(&id)
                    .ok_or(EngineError::UnknownConversation(id))?;
                conv.apply(event)?;
                match other {
                    EventKind::UserMessage { message_id, .. }
                    | EventKind::MessageProposed { message_id, .. } => {
                        self.next_message = self.next_message.max(message_id.0 + 1);
                    }
                    EventKind::RewardGranted {
                        conversation_id,
                        message_id,
                        worker_id,
                        reason,
                        points,
                    } => self.ledger.record(Grant {
                        worker_id: worker_id.clone(),
                        reason: *reason,
                        points: *points,
                        conversation_id: *conversation_id,
                        message_id: *message_id,
                    }),
                    _ => {}
                }
            }
        }
        self.next_seq = self.next_seq.max(event.seq + 1);
        Ok(())
    }

    /// Persists then applies one event.
    fn commit(&mut self, ts: Timestamp, kind: EventKind) -> Result<Event, EngineError> {
        let event = Event {
            seq: self.next_seq,
            ts,
            kind,
        };
        self.sink.append(&event)?;
        self.apply(&event).map_err(|e| EngineError::Corrupt {
            seq: event.seq,
            source: Box::new(e),
        })?;
        self.events.push(event.clone());
        Ok(event)
    }

    fn open_conv(&self, id: ConversationId) -> Result<&Conversation, EngineError> {
        let conv = self.conversation(id)?;
        conv.check_open()?;
        Ok(conv)
    }

    pub fn register_bot(
        &mut self,
        bot_id: &str,
        example_messages: Vec<String>,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        if self.bots.contains_key(bot_id) {
            return Err(EngineError::DuplicateBot(bot_id.to_string()));
        }
        self.commit(
            now,
            EventKind::BotRegistered {
                bot_id: bot_id.to_string(),
                example_messages,
            },
        )?;
        Ok(())
    }

    pub fn open_conversation(
        &mut self,
        user_id: &str,
        phase: PhaseConfig,
        automation_enabled: bool,
        now: Timestamp,
    ) -> Result<ConversationId, EngineError> {
        phase.validate()?;
        let id = ConversationId(self.next_conversation);
        self.commit(
            now,
            EventKind::ConversationOpened {
                conversation_id: id,
                user_id: user_id.to_string(),
                phase,
                automation_enabled,
            },
        )?;
        Ok(id)
    }

    pub fn join_worker(
        &mut self,
        conv: ConversationId,
        worker_id: &str,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        let c = self.open_conv(conv)?;
        if c.is_active_worker(worker_id) {
            return Err(ConversationError::AlreadyActive(worker_id.to_string()).into());
        }
        if c.currently_active() >= c.phase.max_workers {
            return Err(ConversationError::Full(c.phase.max_workers).into());
        }
        self.commit(
            now,
            EventKind::WorkerJoined {
                conversation_id: conv,
                worker_id: worker_id.to_string(),
            },
        )?;
        Ok(())
    }

    /// Removes a worker; closes the conversation when the last one leaves.
    /// Returns whether the conversation was closed.
    pub fn leave_worker(
        &mut self,
        conv: ConversationId,
        worker_id: &str,
        now: Timestamp,
    ) -> Result<bool, EngineError> {
        let c = self.open_conv(conv)?;
        if !c.is_active_worker(worker_id) {
            return Err(ConversationError::UnknownAuthor(worker_id.to_string()).into());
        }
        self.commit(
            now,
            EventKind::WorkerLeft {
                conversation_id: conv,
                worker_id: worker_id.to_string(),
            },
        )?;
        if self.conversation(conv)?.currently_active() == 0 {
            self.close_conversation(conv, CloseReason::AllWorkersLeft, now)?;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn post_user_message(
        &mut self,
        conv: ConversationId,
        text: &str,
        now: Timestamp,
    ) -> Result<MessageId, EngineError> {
        self.open_conv(conv)?;
        Conversation::check_text(text)?;
        let id = MessageId(self.next_message);
        self.commit(
            now,
            EventKind::UserMessage {
                conversation_id: conv,
                message_id: id,
                text: text.to_string(),
            },
        )?;
        Ok(id)
    }

    /// Adds a candidate response. Worker candidates carry the author's
    /// implicit upvote and may be accepted immediately.
    pub fn propose_response(
        &mut self,
        conv: ConversationId,
        author: &str,
        role: Role,
        text: &str,
        origin_bot: Option<&str>,
        now: Timestamp,
    ) -> Result<Proposal, EngineError> {
        let c = self.open_conv(conv)?;
        c.check_proposal(author, role, text, origin_bot)?;
        if let Some(bot) = origin_bot {
            if !self.bots.contains_key(bot) {
                return Err(EngineError::UnknownBot(bot.to_string()));
            }
        }
        let active_workers = c.active_worker_count(now);
        let id = MessageId(self.next_message);
        self.commit(
            now,
            EventKind::MessageProposed {
                conversation_id: conv,
                message_id: id,
                author: author.to_string(),
                role,
                text: text.to_string(),
                origin_bot: if role == Role::Bot {
                    origin_bot.map(str::to_string)
                } else {
                    None
                },
                active_workers,
            },
        )?;
        let outcome = if role == Role::Worker {
            self.commit(
                now,
                EventKind::VoteCast {
                    conversation_id: conv,
                    message_id: id,
                    voter_id: author.to_string(),
                    voter_kind: VoterKind::Human,
                    polarity: Polarity::Up,
                },
            )?;
            self.settle(conv, id, now)?
        } else {
            VoteOutcome::Pending
        };
        Ok(Proposal {
            message_id: id,
            outcome,
        })
    }

    /// Records a vote and runs the acceptance check. Votes on resolved
    /// candidates and repeat votes are ignored without being logged.
    pub fn cast_vote(
        &mut self,
        conv: ConversationId,
        message_id: MessageId,
        voter_id: &str,
        voter_kind: VoterKind,
        polarity: Polarity,
        now: Timestamp,
    ) -> Result<VoteOutcome, EngineError> {
        if voter_kind == VoterKind::Machine && polarity == Polarity::Down {
            return Err(EngineError::MachineDownvote);
        }
        let c = self.conversation(conv)?;
        let msg = c
            .message(message_id)
            .ok_or(ConversationError::UnknownMessage(message_id))?;
        if msg.state != MessageState::Proposed {
            return Ok(VoteOutcome::Ignored(IgnoreReason::Terminal));
        }
        if msg.has_voted(voter_id) {
            return Ok(VoteOutcome::Ignored(IgnoreReason::Duplicate));
        }
        if voter_kind == VoterKind::Human && !c.is_active_worker(voter_id) {
            return Err(ConversationError::UnknownAuthor(voter_id.to_string()).into());
        }
        let grant = (voter_kind == VoterKind::Human && polarity == Polarity::Up)
            .then(|| upvote_grant(msg, voter_id, &self.schema))
            .flatten();
        self.commit(
            now,
            EventKind::VoteCast {
                conversation_id: conv,
                message_id,
                voter_id: voter_id.to_string(),
                voter_kind,
                polarity,
            },
        )?;
        if let Some(g) = grant {
            self.commit_grant(g, now)?;
        }
        self.settle(conv, message_id, now)
    }

    fn settle(
        &mut self,
        conv: ConversationId,
        message_id: MessageId,
        now: Timestamp,
    ) -> Result<VoteOutcome, EngineError> {
        let c = self.conversation(conv)?;
        let msg = c
            .message(message_id)
            .ok_or(ConversationError::UnknownMessage(message_id))?;
        if acceptance_check(msg, &c.phase) {
            self.accept_message(conv, message_id, now)?;
            Ok(VoteOutcome::Accepted)
        } else {
            Ok(VoteOutcome::Pending)
        }
    }

    fn commit_grant(&mut self, g: Grant, now: Timestamp) -> Result<(), EngineError> {
        self.commit(
            now,
            EventKind::RewardGranted {
                conversation_id: g.conversation_id,
                message_id: g.message_id,
                worker_id: g.worker_id,
                reason: g.reason,
                points: g.points,
            },
        )?;
        Ok(())
    }

    /// Accepts a candidate, grants its rewards and expires every other
    /// pending candidate in the conversation. Returns the expired ids.
    pub fn accept_message(
        &mut self,
        conv: ConversationId,
        message_id: MessageId,
        now: Timestamp,
    ) -> Result<Vec<MessageId>, EngineError> {
        self.conversation(conv)?.check_accept(message_id)?;
        self.commit(
            now,
            EventKind::MessageAccepted {
                conversation_id: conv,
                message_id,
            },
        )?;
        let c = self.conversation(conv)?;
        let msg = c.message(message_id).expect("just accepted");
        let grants = grant_rewards_on_accept(msg, &self.schema);
        let siblings: Vec<MessageId> = c.proposed().map(|m| m.id).collect();
        for g in grants {
            self.commit_grant(g, now)?;
        }
        for id in &siblings {
            self.commit(
                now,
                EventKind::MessageExpired {
                    conversation_id: conv,
                    message_id: *id,
                },
            )?;
        }
        Ok(siblings)
    }

    /// Expires every pending candidate without accepting anything.
    pub fn expire_pending(
        &mut self,
        conv: ConversationId,
        now: Timestamp,
    ) -> Result<Vec<MessageId>, EngineError> {
        let ids: Vec<MessageId> = self.conversation(conv)?.proposed().map(|m| m.id).collect();
        for id in &ids {
            self.commit(
                now,
                EventKind::MessageExpired {
                    conversation_id: conv,
                    message_id: *id,
                },
            )?;
        }
        Ok(ids)
    }

    pub fn add_fact(
        &mut self,
        conv: ConversationId,
        author: &str,
        text: &str,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        self.open_conv(conv)?;
        Conversation::check_text(text)?;
        self.commit(
            now,
            EventKind::FactAdded {
                conversation_id: conv,
                author: author.to_string(),
                text: text.to_string(),
            },
        )?;
        Ok(())
    }

    /// Expires pending candidates and closes the conversation.
    pub fn close_conversation(
        &mut self,
        conv: ConversationId,
        reason: CloseReason,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        self.open_conv(conv)?;
        self.expire_pending(conv, now)?;
        self.commit(
            now,
            EventKind::ConversationClosed {
                conversation_id: conv,
                reason,
            },
        )?;
        Ok(())
    }

    pub fn record_bot_declined(
        &mut self,
        conv: ConversationId,
        bot_id: &str,
        reason: &str,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        self.conversation(conv)?;
        self.commit(
            now,
            EventKind::BotDeclined {
                conversation_id: conv,
                bot_id: bot_id.to_string(),
                reason: reason.to_string(),
            },
        )?;
        Ok(())
    }

    pub fn record_bot_outcome(
        &mut self,
        conv: ConversationId,
        bot_id: &str,
        user_message_id: MessageId,
        accepted: bool,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        self.conversation(conv)?;
        if !self.bots.contains_key(bot_id) {
            return Err(EngineError::UnknownBot(bot_id.to_string()));
        }
        self.commit(
            now,
            EventKind::BotOutcome {
                conversation_id: conv,
                bot_id: bot_id.to_string(),
                user_message_id,
                accepted,
            },
        )?;
        Ok(())
    }
}
