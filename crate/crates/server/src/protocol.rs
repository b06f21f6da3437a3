//! Frames exchanged with clients. Everything is JSON tagged by `type`.

use serde::{Deserialize, Serialize};

use hivechat_core::conversation::{ConversationId, MessageId, Polarity, Role, VoterKind};
use hivechat_core::event::{CloseReason, Event, EventKind};

/// A command sent by a connected participant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientCommand {
    UserMessage { text: String },
    Propose { text: String },
    Upvote { message_id: MessageId },
    Downvote { message_id: MessageId },
    AddFact { text: String },
    Leave,
}

impl ClientCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ClientCommand::UserMessage { .. } => "user_message",
            ClientCommand::Propose { .. } => "propose",
            ClientCommand::Upvote { .. } => "upvote",
            ClientCommand::Downvote { .. } => "downvote",
            ClientCommand::AddFact { .. } => "add_fact",
            ClientCommand::Leave => "leave",
        }
    }
}

/// A command frame with an optional client-chosen correlation id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub command: ClientCommand,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "role", content = "id", rename_all = "snake_case")]
pub enum Participant {
    User(String),
    Worker(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    /// First frame on a socket.
    Welcome {
        conversation_id: ConversationId,
        participant: Participant,
        /// Sequence number of the last event already reflected in state.
        last_seq: Option<u64>,
    },
    /// The command was applied and persisted; `seq` is the last event it
    /// wrote, if any.
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        command: String,
        seq: Option<u64>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
    UserMessage {
        seq: u64,
        conversation_id: ConversationId,
        message_id: MessageId,
        text: String,
    },
    MessageProposed {
        seq: u64,
        conversation_id: ConversationId,
        message_id: MessageId,
        author: String,
        role: Role,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin_bot: Option<String>,
    },
    MessageAccepted {
        seq: u64,
        conversation_id: ConversationId,
        message_id: MessageId,
    },
    MessageExpired {
        seq: u64,
        conversation_id: ConversationId,
        message_id: MessageId,
    },
    VoteCast {
        seq: u64,
        conversation_id: ConversationId,
        message_id: MessageId,
        voter_id: String,
        voter_kind: VoterKind,
        polarity: Polarity,
    },
    WorkerJoined {
        seq: u64,
        conversation_id: ConversationId,
        worker_id: String,
    },
    WorkerLeft {
        seq: u64,
        conversation_id: ConversationId,
        worker_id: String,
    },
    PointsUpdate {
        seq: u64,
        conversation_id: ConversationId,
        worker_id: String,
        delta: u64,
        /// The worker's running total across all conversations.
        points: u64,
    },
    FactAdded {
        seq: u64,
        conversation_id: ConversationId,
        author: String,
        text: String,
    },
    ConversationClosed {
        seq: u64,
        conversation_id: ConversationId,
        reason: CloseReason,
    },
}

impl ServerFrame {
    pub fn conversation_id(&self) -> Option<ConversationId> {
        match self {
            ServerFrame::Welcome {
                conversation_id, ..
            }
            | ServerFrame::UserMessage {
                conversation_id, ..
            }
            | ServerFrame::MessageProposed {
                conversation_id, ..
            }
            | ServerFrame::MessageAccepted {
                conversation_id, ..
            }
            | ServerFrame::MessageExpired {
                conversation_id, ..
            }
            | ServerFrame::VoteCast {
                conversation_id, ..
            }
            | ServerFrame::WorkerJoined {
                conversation_id, ..
            }
            | ServerFrame::WorkerLeft {
                conversation_id, ..
            }
            | ServerFrame::PointsUpdate {
                conversation_id, ..
            }
            | ServerFrame::FactAdded {
                conversation_id, ..
            }
            | ServerFrame::ConversationClosed {
                conversation_id, ..
            } => Some(*conversation_id),
            ServerFrame::Ack { .. } | ServerFrame::Error { .. } => None,
        }
    }

    /// The client-facing view of one logged event. `running_total` is the
    /// worker's point total after a reward event. Internal bookkeeping
    /// events map to `None`.
    pub fn from_event(event: &Event, running_total: impl FnOnce(&str) -> u64) -> Option<Self> {
        let seq = event.seq;
        Some(match event.kind.clone() {
            EventKind::UserMessage {
                conversation_id,
                message_id,
                text,
            } => ServerFrame::UserMessage {
                seq,
                conversation_id,
                message_id,
                text,
            },
            EventKind::MessageProposed {
                conversation_id,
                message_id,
                author,
                role,
                text,
                origin_bot,
                ..
            } => ServerFrame::MessageProposed {
                seq,
                conversation_id,
                message_id,
                author,
                role,
                text,
                origin_bot,
            },
            EventKind::MessageAccepted {
                conversation_id,
                message_id,
            } => ServerFrame::MessageAccepted {
                seq,
                conversation_id,
                message_id,
            },
            EventKind::MessageExpired {
                conversation_id,
                message_id,
            } => ServerFrame::MessageExpired {
                seq,
                conversation_id,
                message_id,
            },
            EventKind::VoteCast {
                conversation_id,
                message_id,
                voter_id,
                voter_kind,
                polarity,
            } => ServerFrame::VoteCast {
                seq,
                conversation_id,
                message_id,
                voter_id,
                voter_kind,
                polarity,
            },
            EventKind::WorkerJoined {
                conversation_id,
                worker_id,
            } => ServerFrame::WorkerJoined {
                seq,
                conversation_id,
                worker_id,
            },
            EventKind::WorkerLeft {
                conversation_id,
                worker_id,
            } => ServerFrame::WorkerLeft {
                seq,
                conversation_id,
                worker_id,
            },
            EventKind::RewardGranted {
                conversation_id,
                worker_id,
                points,
                ..
            } => {
                let total = running_total(&worker_id);
                ServerFrame::PointsUpdate {
                    seq,
                    conversation_id,
                    worker_id,
                    delta: points,
                    points: total,
                }
            }
            EventKind::FactAdded {
                conversation_id,
                author,
                text,
            } => ServerFrame::FactAdded {
                seq,
                conversation_id,
                author,
                text,
            },
            EventKind::ConversationClosed {
                conversation_id,
                reason,
            } => ServerFrame::ConversationClosed {
                seq,
                conversation_id,
                reason,
            },
            EventKind::BotRegistered { .. }
            | EventKind::ConversationOpened { .. }
            | EventKind::BotDeclined { .. }
            | EventKind::BotOutcome { .. } => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_round_trip() {
        let f: CommandFrame =
            serde_json::from_str(r#"{"id":4,"type":"upvote","message_id":12}"#).unwrap();
        assert_eq!(f.id, Some(4));
        assert_eq!(
            f.command,
            ClientCommand::Upvote {
                message_id: MessageId(12)
            }
        );
        let leave: CommandFrame = serde_json::from_str(r#"{"type":"leave"}"#).unwrap();
        assert_eq!(leave.command, ClientCommand::Leave);
        assert!(serde_json::from_str::<CommandFrame>(r#"{"type":"dance"}"#).is_err());
    }

    #[test]
    fn participants_are_tagged() {
        let p: Participant = serde_json::from_str(r#"{"role":"worker","id":"w1"}"#).unwrap();
        assert_eq!(p, Participant::Worker("w1".into()));
    }
}
