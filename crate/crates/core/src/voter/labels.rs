//! Training labels from crowd votes.
//!
//! Upvote class: accepted worker candidates with at least one upvote and no
//! downvotes. Downvote class: expired candidates with at least one downvote.
//! Candidates accepted on the proposer's own vote alone (too few workers for
//! voting to mean anything) and everything else are excluded.

use serde::{Deserialize, Serialize};

use crate::conversation::{
    Conversation, ConversationId, Message, MessageId, MessageState, Polarity, Role,
};
use crate::embedding::VectorTable;
use crate::engine::{Engine, EngineError};
use crate::event::Event;
use crate::voting::{RewardSchema, VoteWeights};

use super::features::{featurize, FeatureVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteLabel {
    Upvote,
    Downvote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    NotWorker,
    Pending,
    AutoAccepted,
    AcceptedWithDownvote,
    AcceptedWithoutUpvote,
    ExpiredWithoutDownvote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Labeled(VoteLabel),
    Excluded(Exclusion),
}

/// True when a single upvote already meets the threshold for this message.
pub fn auto_accepting(active_workers: u32, weights: &VoteWeights) -> bool {
    weights.threshold * (active_workers as f64) < weights.up
}

pub fn partition(msg: &Message, weights: &VoteWeights) -> Partition {
    use Partition::*;
    if msg.role != Role::Worker {
        return Excluded(Exclusion::NotWorker);
    }
    let ups = msg
        .votes
        .iter()
        .filter(|v| v.polarity == Polarity::Up)
        .count();
    let downs = msg.votes.len() - ups;
    match msg.state {
        MessageState::Proposed => Excluded(Exclusion::Pending),
        MessageState::Accepted => {
            if auto_accepting(msg.active_workers, weights) {
                Excluded(Exclusion::AutoAccepted)
            } else if downs > 0 {
                Excluded(Exclusion::AcceptedWithDownvote)
            } else if ups == 0 {
                Excluded(Exclusion::AcceptedWithoutUpvote)
            } else {
                Labeled(VoteLabel::Upvote)
            }
        }
        MessageState::Expired => {
            if downs > 0 {
                Labeled(VoteLabel::Downvote)
            } else {
                Excluded(Exclusion::ExpiredWithoutDownvote)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: VoteLabel,
    pub conversation_id: ConversationId,
    pub message_id: MessageId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub upvote: usize,
    pub downvote: usize,
    pub excluded: usize,
}

impl PartitionCounts {
    pub fn total(&self) -> usize {
        self.upvote + self.downvote + self.excluded
    }
}

pub fn partition_counts<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
) -> PartitionCounts {
    let mut counts = PartitionCounts::default();
    for conv in conversations {
        for m in &conv.messages {
            match partition(m, &conv.phase.weights) {
                Partition::Labeled(VoteLabel::Upvote) => counts.upvote += 1,
                Partition::Labeled(VoteLabel::Downvote) => counts.downvote += 1,
                Partition::Excluded(_) => counts.excluded += 1,
            }
        }
    }
    counts
}

pub fn examples_from<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
    table: &VectorTable,
) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for conv in conversations {
        for m in &conv.messages {
            if let Partition::Labeled(label) = partition(m, &conv.phase.weights) {
                out.push(LabeledExample {
                    features: featurize(m, conv, table),
                    label,
                    conversation_id: conv.id,
                    message_id: m.id,
                });
            }
        }
    }
    out
}

/// Replays each log and extracts labeled, featurized examples.
pub fn extract_training_labels(
    logs: &[Vec<Event>],
    table: &VectorTable,
) -> Result<Vec<LabeledExample>, EngineError> {
    let mut out = Vec::new();
    for log in logs {
        let engine = Engine::replay(RewardSchema::default(), log)?;
        out.extend(examples_from(engine.conversations(), table));
    }
    Ok(out)
}
