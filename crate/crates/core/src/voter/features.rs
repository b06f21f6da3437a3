//! Fixed-schema feature vectors for candidate messages.
//!
//! Layout (schema version 1): twelve scalar features followed by the
//! message's averaged word vector and the averaged word vector of the last
//! user message before it. Everything is computed from events strictly
//! before the candidate was proposed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Message, MessageState};
use crate::embedding::{tokenize, VectorTable};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Version stamped on vectors that do not follow the message schema
/// (synthetic data, ad-hoc experiments).
pub const RAW_SCHEMA_VERSION: u32 = 0;

pub const SCALAR_FEATURES: [&str; 12] = [
    "token_count",
    "char_length",
    "distinct_tokens",
    "has_question",
    "has_url",
    "turn_accepted",
    "turn_not_accepted",
    "turn_position",
    "turn_index",
    "conversation_accepted",
    "proposer_acceptance_rate",
    "proposer_not_accepted",
];

/// Acceptance rate assumed for a proposer with no earlier candidates.
pub const NEUTRAL_ACCEPTANCE_RATE: f64 = 0.5;

pub fn feature_len(dim: usize) -> usize {
    SCALAR_FEATURES.len() + 2 * dim
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_version: u32,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            schema_version: RAW_SCHEMA_VERSION,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        SCALAR_FEATURES
            .iter()
            .position(|n| *n == name)
            .and_then(|i| self.values.get(i).copied())
    }
}

fn has_url(text: &str) -> bool {
    let lower = text.to_lowercase();
    lower.contains("http://") || lower.contains("https://") || lower.contains("www.")
}

pub fn featurize(msg: &Message, conv: &Conversation, table: &VectorTable) -> FeatureVector {
    let cut = msg.created_seq;
    let tokens = tokenize(&msg.text);
    let distinct: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();

    let before = || {
        conv.messages
            .iter()
            .filter(move |m| m.created_seq < cut && !m.is_user())
    };
    let accepted_before = |m: &Message| m.state_before(cut) == Some(MessageState::Accepted);

    let (mut turn_acc, mut turn_not) = (0usize, 0usize);
    for m in before().filter(|m| m.turn == msg.turn) {
        if accepted_before(m) {
            turn_acc += 1;
        } else {
            turn_not += 1;
        }
    }
    let conv_acc = before().filter(|m| accepted_before(m)).count();
    let (mut own_acc, mut own_total) = (0usize, 0usize);
    for m in before().filter(|m| m.author == msg.author && m.role == msg.role) {
        own_total += 1;
        if accepted_before(m) {
            own_acc += 1;
        }
    }
    let own_rate = if own_total == 0 {
        NEUTRAL_ACCEPTANCE_RATE
    } else {
        own_acc as f64 / own_total as f64
    };

    let mut values = vec![
        tokens.len() as f64,
        msg.text.chars().count() as f64,
        distinct.len() as f64,
        f64::from(u8::from(msg.text.contains('?'))),
        f64::from(u8::from(has_url(&msg.text))),
        turn_acc as f64,
        turn_not as f64,
        (turn_acc + turn_not + 1) as f64,
        msg.turn as f64,
        conv_acc as f64,
        own_rate,
        (own_total - own_acc) as f64,
    ];
    values.extend(table.embed(&msg.text).values);
    let last_user = conv
        .messages
        .iter()
        .rev()
        .find(|m| m.is_user() && m.created_seq < cut);
    match last_user {
        Some(u) => values.extend(table.embed(&u.text).values),
        None => values.extend(std::iter::repeat_n(0.0, table.dim())),
    }
    FeatureVector {
        schema_version: FEATURE_SCHEMA_VERSION,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{Polarity, Role, VoterKind};
    use crate::engine::Engine;
    use crate::phase::PhaseConfig;
    use crate::time::Timestamp;
    use crate::voting::RewardSchema;

    fn table() -> VectorTable {
        VectorTable::from_entries(2, [("where", vec![1.0, 2.0]), ("hello", vec![3.0, 4.0])])
            .unwrap()
    }

    #[test]
    fn fresh_worker_first_candidate() {
        let mut e = Engine::new(RewardSchema::default());
        let c = e
            .open_conversation("u", PhaseConfig::phase1(), true, Timestamp(0))
            .unwrap();
        for w in ["w1", "w2", "w3"] {
            e.join_worker(c, w, Timestamp(0)).unwrap();
        }
        e.post_user_message(c, "hello", Timestamp(1)).unwrap();
        let p = e
            .propose_response(c, "w1", Role::Worker, "where?", None, Timestamp(2))
            .unwrap();
        let conv = e.conversation(c).unwrap();
        let f = featurize(conv.message(p.message_id).unwrap(), conv, &table());
        assert_eq!(f.len(), feature_len(2));
        assert_eq!(f.get("token_count"), Some(1.0));
        assert_eq!(f.get("has_question"), Some(1.0));
        assert_eq!(f.get("has_url"), Some(0.0));
        assert_eq!(f.get("turn_accepted"), Some(0.0));
        assert_eq!(f.get("turn_not_accepted"), Some(0.0));
        assert_eq!(f.get("turn_position"), Some(1.0));
        assert_eq!(f.get("turn_index"), Some(1.0));
        assert_eq!(f.get("conversation_accepted"), Some(0.0));
        assert_eq!(f.get("proposer_acceptance_rate"), Some(0.5));
        assert_eq!(f.get("proposer_not_accepted"), Some(0.0));
        assert_eq!(&f.values[12..], &[1.0, 2.0, 3.0, 4.0]);
        let again = featurize(conv.message(p.message_id).unwrap(), conv, &table());
        assert_eq!(f, again);
    }

    #[test]
    fn history_counts_only_earlier_events() {
        let mut e = Engine::new(RewardSchema::default());
        let c = e
            .open_conversation("u", PhaseConfig::phase1(), true, Timestamp(0))
            .unwrap();
        for w in ["w1", "w2", "w3"] {
            e.join_worker(c, w, Timestamp(0)).unwrap();
        }
        e.post_user_message(c, "hello", Timestamp(1)).unwrap();
        let a = e
            .propose_response(c, "w1", Role::Worker, "one", None, Timestamp(2))
            .unwrap();
        let b = e
            .propose_response(c, "w1", Role::Worker, "two", None, Timestamp(3))
            .unwrap();
        let snapshot = {
            let conv = e.conversation(c).unwrap();
            featurize(conv.message(b.message_id).unwrap(), conv, &table())
        };
        assert_eq!(snapshot.get("turn_not_accepted"), Some(1.0));
        assert_eq!(snapshot.get("proposer_acceptance_rate"), Some(0.0));
        // Accepting `a` afterwards must not change b's features.
        e.cast_vote(
            c,
            a.message_id,
            "w2",
            VoterKind::Human,
            Polarity::Up,
            Timestamp(4),
        )
        .unwrap();
        let conv = e.conversation(c).unwrap();
        assert_eq!(
            featurize(conv.message(b.message_id).unwrap(), conv, &table()),
            snapshot
        );
    }
}
