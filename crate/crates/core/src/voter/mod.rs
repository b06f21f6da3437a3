//! Automatic upvoting of human-proposed candidates.

pub mod features;
pub mod labels;
pub mod logistic;

use thiserror::Error;

use crate::conversation::{Conversation, Message, MessageState, Role, VoterKind};
use crate::embedding::VectorTable;

pub use features::{feature_len, featurize, FeatureVector, FEATURE_SCHEMA_VERSION};
pub use labels::{
    extract_training_labels, partition, partition_counts, Exclusion, LabeledExample, Partition,
    PartitionCounts, VoteLabel,
};
pub use logistic::{
    evaluate, evaluate_scored, objective, score_examples, sigmoid, train, train_raw, ClassMetrics,
    EvalReport, TrainConfig, VoteClassifierModel,
};

/// Voter id the vote bot casts under.
pub const VOTE_BOT_ID: &str = "vote-bot";

#[derive(Debug, Error)]
pub enum VoterError {
    #[error(
        "feature schema mismatch: model v{model_version} len {model_len}, \
         features v{features_version} len {features_len}"
    )]
    SchemaMismatch {
        model_version: u32,
        model_len: usize,
        features_version: u32,
        features_len: usize,
    },
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("feature rows differ in length or schema")]
    RaggedFeatures,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbstainReason {
    NotProposed,
    NotHuman,
    RepeatedText,
    AlreadyVoted,
    LowConfidence,
    SchemaMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VoteDecision {
    Upvote { confidence: f64 },
    Abstain(AbstainReason),
}

impl VoteDecision {
    pub fn is_upvote(&self) -> bool {
        matches!(self, VoteDecision::Upvote { .. })
    }
}

fn repeats_rejected_text(msg: &Message, conv: &Conversation) -> bool {
    conv.messages.iter().any(|m| {
        m.created_seq < msg.created_seq
            && m.author == msg.author
            && m.text == msg.text
            && m.state_before(msg.created_seq) != Some(MessageState::Accepted)
    })
}

pub fn maybe_vote(
    model: &VoteClassifierModel,
    msg: &Message,
    conv: &Conversation,
    table: &VectorTable,
) -> VoteDecision {
    maybe_vote_at(model, msg, conv, table, model.confidence_threshold)
}

/// [`maybe_vote`] with an explicit confidence threshold.
pub fn maybe_vote_at(
    model: &VoteClassifierModel,
    msg: &Message,
    conv: &Conversation,
    table: &VectorTable,
    threshold: f64,
) -> VoteDecision {
    if msg.state != MessageState::Proposed {
        return VoteDecision::Abstain(AbstainReason::NotProposed);
    }
    if msg.role != Role::Worker || msg.origin_bot.is_some() {
        return VoteDecision::Abstain(AbstainReason::NotHuman);
    }
    if repeats_rejected_text(msg, conv) {
        return VoteDecision::Abstain(AbstainReason::RepeatedText);
    }
    if msg
        .votes
        .iter()
        .any(|v| v.voter_kind == VoterKind::Machine || v.voter_id == VOTE_BOT_ID)
    {
        return VoteDecision::Abstain(AbstainReason::AlreadyVoted);
    }
    match model.predict_confidence(&featurize(msg, conv, table)) {
        Ok(confidence) if confidence >= threshold => VoteDecision::Upvote { confidence },
        Ok(_) => VoteDecision::Abstain(AbstainReason::LowConfidence),
        Err(_) => VoteDecision::Abstain(AbstainReason::SchemaMismatch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{ConversationId, MessageId, Polarity};
    use crate::engine::Engine;
    use crate::phase::PhaseConfig;
    use crate::time::Timestamp;
    use crate::voting::RewardSchema;

    fn model_with_confidence(p: f64, threshold: f64) -> VoteClassifierModel {
        let mut m = VoteClassifierModel::zeros(feature_len(2), FEATURE_SCHEMA_VERSION);
        m.bias = (p / (1.0 - p)).ln();
        m.confidence_threshold = threshold;
        m
    }

    fn setup() -> (Engine, ConversationId, VectorTable) {
        let mut e = Engine::new(RewardSchema::default());
        e.register_bot("echo", vec![], Timestamp(0)).unwrap();
        let c = e
            .open_conversation("u1", PhaseConfig::phase2(), true, Timestamp(0))
            .unwrap();
        for w in ["w1", "w2", "w3", "w4", "w5"] {
            e.join_worker(c, w, Timestamp(0)).unwrap();
        }
        e.post_user_message(c, "hello there", Timestamp(1)).unwrap();
        (e, c, VectorTable::new(2))
    }

    fn decide(
        e: &Engine,
        c: ConversationId,
        id: MessageId,
        m: &VoteClassifierModel,
        t: &VectorTable,
    ) -> VoteDecision {
        let conv = e.conversation(c).unwrap();
        maybe_vote(m, conv.message(id).unwrap(), conv, t)
    }

    #[test]
    fn upvotes_above_threshold() {
        let (mut e, c, t) = setup();
        let id = e
            .propose_response(
                c,
                "w1",
                Role::Worker,
                "hi, how can I help?",
                None,
                Timestamp(2),
            )
            .unwrap()
            .message_id;
        let d = decide(&e, c, id, &model_with_confidence(0.71, 0.7), &t);
        match d {
            VoteDecision::Upvote { confidence } => assert!((confidence - 0.71).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            decide(&e, c, id, &model_with_confidence(0.69, 0.7), &t),
            VoteDecision::Abstain(AbstainReason::LowConfidence)
        );
    }

    #[test]
    fn bot_messages_never_voted() {
        let (mut e, c, t) = setup();
        let id = e
            .propose_response(
                c,
                "echo",
                Role::Bot,
                "hello there",
                Some("echo"),
                Timestamp(2),
            )
            .unwrap()
            .message_id;
        let d = decide(&e, c, id, &model_with_confidence(0.999, 0.7), &t);
        assert_eq!(d, VoteDecision::Abstain(AbstainReason::NotHuman));
    }

    #[test]
    fn repeated_text_skipped() {
        let (mut e, c, t) = setup();
        let first = e
            .propose_response(c, "w1", Role::Worker, "try the cafe", None, Timestamp(2))
            .unwrap()
            .message_id;
        let other = e
            .propose_response(c, "w2", Role::Worker, "try the bistro", None, Timestamp(3))
            .unwrap()
            .message_id;
        e.cast_vote(c, other, "w3", VoterKind::Human, Polarity::Up, Timestamp(4))
            .unwrap();
        assert_eq!(
            e.conversation(c).unwrap().message(first).unwrap().state,
            MessageState::Expired
        );
        e.post_user_message(c, "anything else?", Timestamp(5))
            .unwrap();
        let again = e
            .propose_response(c, "w1", Role::Worker, "try the cafe", None, Timestamp(6))
            .unwrap()
            .message_id;
        let m = model_with_confidence(0.99, 0.7);
        assert_eq!(
            decide(&e, c, again, &m, &t),
            VoteDecision::Abstain(AbstainReason::RepeatedText)
        );
        let fresh = e
            .propose_response(c, "w2", Role::Worker, "try the cafe", None, Timestamp(7))
            .unwrap()
            .message_id;
        assert!(decide(&e, c, fresh, &m, &t).is_upvote());
    }

    #[test]
    fn one_machine_vote_per_message() {
        let (mut e, c, t) = setup();
        let id = e
            .propose_response(c, "w1", Role::Worker, "sure thing", None, Timestamp(2))
            .unwrap()
            .message_id;
        e.cast_vote(c, id, "w2", VoterKind::Human, Polarity::Down, Timestamp(3))
            .unwrap();
        e.cast_vote(
            c,
            id,
            VOTE_BOT_ID,
            VoterKind::Machine,
            Polarity::Up,
            Timestamp(3),
        )
        .unwrap();
        assert_eq!(
            decide(&e, c, id, &model_with_confidence(0.99, 0.7), &t),
            VoteDecision::Abstain(AbstainReason::AlreadyVoted)
        );
    }

    #[test]
    fn resolved_messages_skipped() {
        let (mut e, c, t) = setup();
        let id = e
            .propose_response(c, "w1", Role::Worker, "sure thing", None, Timestamp(2))
            .unwrap()
            .message_id;
        e.expire_pending(c, Timestamp(3)).unwrap();
        assert_eq!(
            decide(&e, c, id, &model_with_confidence(0.99, 0.7), &t),
            VoteDecision::Abstain(AbstainReason::NotProposed)
        );
    }
}
