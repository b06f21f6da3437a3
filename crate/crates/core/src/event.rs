//! Append-only event log.
//!
//! Every state change in the system is recorded as one [`Event`] before it
//! takes effect. The on-disk form is one JSON object per line with the keys
//! `seq`, `ts`, `kind` and `payload`; replaying a log from the start
//! reproduces conversation, ledger and selector state exactly.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conversation::{ConversationId, MessageId, Polarity, Role, VoterKind};
use crate::phase::PhaseConfig;
use crate::time::Timestamp;
use crate::voting::RewardReason;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    AllWorkersLeft,
    IdleTimeout,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    BotRegistered {
        bot_id: String,
        #[serde(default)]
        example_messages: Vec<String>,
    },
    ConversationOpened {
        conversation_id: ConversationId,
        user_id: String,
        phase: PhaseConfig,
        automation_enabled: bool,
    },
    WorkerJoined {
        conversation_id: ConversationId,
        worker_id: String,
    },
    WorkerLeft {
        conversation_id: ConversationId,
        worker_id: String,
    },
    UserMessage {
        conversation_id: ConversationId,
        message_id: MessageId,
        text: String,
    },
    MessageProposed {
        conversation_id: ConversationId,
        message_id: MessageId,
        author: String,
        role: Role,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin_bot: Option<String>,
        active_workers: u32,
    },
    VoteCast {
        conversation_id: ConversationId,
        message_id: MessageId,
        voter_id: String,
        voter_kind: VoterKind,
        polarity: Polarity,
    },
    MessageAccepted {
        conversation_id: ConversationId,
        message_id: MessageId,
    },
    MessageExpired {
        conversation_id: ConversationId,
        message_id: MessageId,
    },
    RewardGranted {
        conversation_id: ConversationId,
        message_id: MessageId,
        worker_id: String,
        reason: RewardReason,
        points: u64,
    },
    FactAdded {
        conversation_id: ConversationId,
        author: String,
        text: String,
    },
    BotDeclined {
        conversation_id: ConversationId,
        bot_id: String,
        reason: String,
    },
    BotOutcome {
        conversation_id: ConversationId,
        bot_id: String,
        user_message_id: MessageId,
        accepted: bool,
    },
    ConversationClosed {
        conversation_id: ConversationId,
        reason: CloseReason,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::BotRegistered { .. } => "bot_registered",
            EventKind::ConversationOpened { .. } => "conversation_opened",
            EventKind::WorkerJoined { .. } => "worker_joined",
            EventKind::WorkerLeft { .. } => "worker_left",
            EventKind::UserMessage { .. } => "user_message",
            EventKind::MessageProposed { .. } => "message_proposed",
            EventKind::VoteCast { .. } => "vote_cast",
            EventKind::MessageAccepted { .. } => "message_accepted",
            EventKind::MessageExpired { .. } => "message_expired",
            EventKind::RewardGranted { .. } => "reward_granted",
            EventKind::FactAdded { .. } => "fact_added",
            EventKind::BotDeclined { .. } => "bot_declined",
            EventKind::BotOutcome { .. } => "bot_outcome",
            EventKind::ConversationClosed { .. } => "conversation_closed",
        }
    }

    pub fn conversation_id(&self) -> Option<ConversationId> {
        match self {
            EventKind::BotRegistered { .. } => None,
            EventKind::ConversationOpened {
                conversation_id, ..
            }
            | EventKind::WorkerJoined {
                conversation_id, ..
            }
            | EventKind::WorkerLeft {
                conversation_id, ..
            }
            | EventKind::UserMessage {
                conversation_id, ..
            }
            | EventKind::MessageProposed {
                conversation_id, ..
            }
            | EventKind::VoteCast {
                conversation_id, ..
            }
            | EventKind::MessageAccepted {
                conversation_id, ..
            }
            | EventKind::MessageExpired {
                conversation_id, ..
            }
            | EventKind::RewardGranted {
                conversation_id, ..
            }
            | EventKind::FactAdded {
                conversation_id, ..
            }
            | EventKind::BotDeclined {
                conversation_id, ..
            }
            | EventKind::BotOutcome {
                conversation_id, ..
            }
            | EventKind::ConversationClosed {
                conversation_id, ..
            } => Some(*conversation_id),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("sequence break at line {line}: expected seq > {previous}, found {found}")]
    Sequence {
        line: usize,
        previous: u64,
        found: u64,
    },
}

/// Durable destination for committed events.
pub trait EventSink: Send {
    /// Must not return until the record is durable as far as the sink can
    /// guarantee; state is only mutated after this succeeds.
    fn append(&mut self, event: &Event) -> io::Result<()>;
}

/// Discards events. The engine keeps its own in-memory copy regardless.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _event: &Event) -> io::Result<()> {
        Ok(())
    }
}

/// JSON-lines file sink; each append is flushed and synced.
pub struct JsonlSink {
    writer: BufWriter<File>,
    sync: bool,
}

impl JsonlSink {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self {
            writer: BufWriter::new(file),
            sync: true,
        })
    }

    pub fn append_to(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: BufWriter::new(file),
            sync: true,
        })
    }

    /// Skip `fsync` after each record (flush only). Used by simulation runs.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }
}

impl EventSink for JsonlSink {
    fn append(&mut self, event: &Event) -> io::Result<()> {
        serde_json::to_writer(&mut self.writer, event)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        if self.sync {
            self.writer.get_ref().sync_data()?;
        }
        Ok(())
    }
}

impl<S: EventSink + ?Sized> EventSink for Box<S> {
    fn append(&mut self, event: &Event) -> io::Result<()> {
        (**self).append(event)
    }
}

pub fn to_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: impl AsRef<Path>, events: &[Event]) -> io::Result<()> {
    std::fs::write(path, to_jsonl(events))
}

/// Parses a JSON-lines log, checking that sequence numbers strictly increase.
/// Blank lines are skipped.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<Event>, LogError> {
    let mut events = Vec::new();
    let mut previous: Option<u64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| LogError::Corrupt {
            line: lineno,
            reason: e.to_string(),
        })?;
        if let Some(prev) = previous {
            if event.seq <= prev {
                return Err(LogError::Sequence {
                    line: lineno,
                    previous: prev,
                    found: event.seq,
                });
            }
        }
        previous = Some(event.seq);
        events.push(event);
    }
    Ok(events)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Event>, LogError> {
    let file = File::open(path)?;
    parse_jsonl(BufReader::new(file))
}
