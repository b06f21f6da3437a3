//! Reuse of crowd-approved answers.
//!
//! Accepted crowd replies without downvotes are paired with the user message
//! they answered. At run time the nearest stored queries (Euclidean distance
//! between averaged word vectors, exact linear scan) are found and one of the
//! top `k` responses is returned at random.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Message, MessageState, Polarity, Role};
use crate::embedding::{l2, MessageVector, VectorTable};
use crate::engine::{Engine, EngineError};
use crate::event::Event;
use crate::voting::RewardSchema;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("corrupt event log: {0}")]
    Log(#[from] EngineError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("pair file line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    pub up: u32,
    pub down: u32,
}

/// One line of a pair file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResponsePair {
    pub query: String,
    pub response: String,
    #[serde(default)]
    pub votes: VoteCounts,
    #[serde(default)]
    pub source: String,
}

/// Which participants' data may not be reused.
#[derive(Clone, Debug, Default)]
pub struct ExtractionFilter {
    pub blocked_ids: BTreeSet<String>,
}

impl ExtractionFilter {
    fn allows(&self, id: &str) -> bool {
        !self.blocked_ids.contains(id)
    }
}

/// The query for a reply in `turn`: the turn's opening user message, joined
/// (oldest first) with earlier consecutive user messages that never got an
/// accepted reply.
fn query_for_turn(conv: &Conversation, turn: u32) -> Option<String> {
    let mut parts = vec![conv.turn_opener(turn)?.text.clone()];
    let mut t = turn;
    while t > 1 {
        let prev = t - 1;
        let answered = conv
            .messages_in_turn(prev)
            .any(|m| !m.is_user() && m.state == MessageState::Accepted);
        if answered {
            break;
        }
        match conv.turn_opener(prev) {
            Some(m) => parts.push(m.text.clone()),
            None => break,
        }
        t = prev;
    }
    parts.reverse();
    Some(parts.join(" "))
}

/// The pair contributed by `msg`: only accepted worker replies with zero
/// downvotes from participants the filter allows.
pub fn pair_for_message(
    conv: &Conversation,
    msg: &Message,
    filter: &ExtractionFilter,
) -> Option<QueryResponsePair> {
    if msg.role != Role::Worker
        || msg.state != MessageState::Accepted
        || msg.turn == 0
        || !filter.allows(&conv.user_id)
        || !filter.allows(&msg.author)
    {
        return None;
    }
    let up = msg
        .votes
        .iter()
        .filter(|v| v.polarity == Polarity::Up)
        .count() as u32;
    let down = msg.votes.len() as u32 - up;
    if down > 0 {
        return None;
    }
    Some(QueryResponsePair {
        query: query_for_turn(conv, msg.turn)?,
        response: msg.text.clone(),
        votes: VoteCounts { up, down },
        source: conv.id.to_string(),
    })
}

/// Pairs for every accepted worker reply with zero downvotes.
pub fn extract_pairs_from(
    conv: &Conversation,
    filter: &ExtractionFilter,
) -> Vec<QueryResponsePair> {
    conv.messages
        .iter()
        .filter_map(|m| pair_for_message(conv, m, filter))
        .collect()
}

/// Replays `events` and extracts pairs from every conversation.
pub fn extract_pairs(
    events: &[Event],
    filter: &ExtractionFilter,
) -> Result<Vec<QueryResponsePair>, RetrievalError> {
    let engine = Engine::replay(RewardSchema::default(), events)?;
    Ok(engine
        .conversations()
        .flat_map(|c| extract_pairs_from(c, filter))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredPair {
    pub pair: QueryResponsePair,
    pub vector: MessageVector,
}

/// Embedded pairs in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairStore {
    dim: usize,
    pairs: Vec<StoredPair>,
    /// Distinct `source` values of the stored pairs.
    pub sources: BTreeSet<String>,
}

/// Result of [`build_store`]: the store and how many queries had no
/// in-vocabulary token and were dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltStore {
    pub store: PairStore,
    pub dropped: usize,
}

pub fn build_store(pairs: Vec<QueryResponsePair>, table: &VectorTable) -> BuiltStore {
    let mut store = PairStore::new(table.dim());
    let mut dropped = 0;
    for pair in pairs {
        if !store.push(pair, table) {
            dropped += 1;
        }
    }
    if dropped > 0 {
        tracing::warn!(
            dropped,
            "pairs without in-vocabulary query tokens were dropped"
        );
    }
    BuiltStore { store, dropped }
}

impl PairStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            pairs: Vec::new(),
            sources: BTreeSet::new(),
        }
    }

    /// Embeds and appends `pair`; returns false if its query vector is empty.
    pub fn push(&mut self, pair: QueryResponsePair, table: &VectorTable) -> bool {
        let vector = table.embed(&pair.query);
        if vector.is_empty() {
            return false;
        }
        self.sources.insert(pair.source.clone());
        self.pairs.push(StoredPair { pair, vector });
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[StoredPair] {
        &self.pairs
    }

    /// Indices of the `k` nearest stored queries with their distances,
    /// nearest first, ties by insertion order.
    pub fn top_k(&self, query: &MessageVector, k: usize) -> Vec<(usize, f64)> {
        if query.dim() != self.dim {
            return Vec::new();
        }
        let mut scored: Vec<(usize, f64)> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                (
                    i,
                    l2(&query.values, &p.vector.values).unwrap_or(f64::INFINITY),
                )
            })
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    /// A uniformly chosen response among the `k` nearest, or `None` for an
    /// empty store or a message with no in-vocabulary token.
    pub fn retrieve<R: Rng + ?Sized>(
        &self,
        message: &MessageVector,
        k: usize,
        rng: &mut R,
    ) -> Option<&StoredPair> {
        if message.is_empty() || self.pairs.is_empty() || k == 0 {
            return None;
        }
        let top = self.top_k(message, k);
        if top.is_empty() {
            return None;
        }
        let (idx, _) = top[rng.random_range(0..top.len())];
        Some(&self.pairs[idx])
    }

    pub fn retrieve_text<R: Rng + ?Sized>(
        &self,
        text: &str,
        table: &VectorTable,
        k: usize,
        rng: &mut R,
    ) -> Option<&str> {
        self.retrieve(&table.embed(text), k, rng)
            .map(|p| p.pair.response.as_str())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for p in &self.pairs {
            serde_json::to_writer(&mut w, &p.pair)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut f = io::BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()
    }
}

pub fn parse_pairs<R: BufRead>(reader: R) -> Result<Vec<QueryResponsePair>, RetrievalError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QueryResponsePair =
            serde_json::from_str(&line).map_err(|e| RetrievalError::Format {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if pair.votes.down > 0 {
            return Err(RetrievalError::Format {
                line: idx + 1,
                reason: "stored pairs must have zero downvotes".into(),
            });
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<QueryResponsePair>, RetrievalError> {
    parse_pairs(BufReader::new(File::open(path)?))
}

pub fn write_pairs<W: Write>(pairs: &[QueryResponsePair], mut w: W) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{Polarity, VoterKind};
    use crate::phase::PhaseConfig;
    use crate::time::Timestamp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> VectorTable {
        VectorTable::from_entries(
            2,
            [
                ("weather", vec![1.0, 0.0]),
                ("rain", vec![0.8, 0.2]),
                ("food", vec![0.0, 1.0]),
                ("pizza", vec![0.1, 0.9]),
            ],
        )
        .unwrap()
    }

    fn pair(q: &str, r: &str) -> QueryResponsePair {
        QueryResponsePair {
            query: q.into(),
            response: r.into(),
            votes: VoteCounts { up: 1, down: 0 },
            source: "t".into(),
        }
    }

    #[test]
    fn build_drops_oov_queries() {
        let built = build_store(
            vec![pair("weather", "a"), pair("qwerty", "b"), pair("food", "c")],
            &table(),
        );
        assert_eq!(built.store.len(), 2);
        assert_eq!(built.dropped, 1);
    }

    #[test]
    fn exact_query_k1_and_empty_cases() {
        let t = table();
        let store = build_store(
            vec![pair("weather", "sunny"), pair("pizza", "try Luigi's")],
            &t,
        )
        .store;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            store.retrieve_text("pizza", &t, 1, &mut rng),
            Some("try Luigi's")
        );
        assert_eq!(store.retrieve_text("zzz", &t, 1, &mut rng), None);
        let empty = PairStore::new(2);
        assert_eq!(empty.retrieve_text("pizza", &t, 2, &mut rng), None);
    }

    #[test]
    fn fewer_than_k_samples_available() {
        let t = table();
        let store = build_store(vec![pair("rain", "umbrella")], &t).store;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(
                store.retrieve_text("food", &t, 5, &mut rng),
                Some("umbrella")
            );
        }
    }

    #[test]
    fn store_file_round_trip_is_byte_identical() {
        let t = table();
        let store = build_store(
            vec![pair("weather", "x \"quoted\""), pair("food", "ünïcode")],
            &t,
        )
        .store;
        let mut first = Vec::new();
        store.write_jsonl(&mut first).unwrap();
        let reread = build_store(parse_pairs(first.as_slice()).unwrap(), &t).store;
        let mut second = Vec::new();
        reread.write_jsonl(&mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(reread, store);
    }

    #[test]
    fn extraction_rules() {
        let mut e = Engine::new(RewardSchema::default());
        e.register_bot("bot", vec![], Timestamp(0)).unwrap();
        let c = e
            .open_conversation("u1", PhaseConfig::phase1(), true, Timestamp(0))
            .unwrap();
        for w in ["w1", "w2", "w3"] {
            e.join_worker(c, w, Timestamp(0)).unwrap();
        }
        e.post_user_message(c, "is it going to rain", Timestamp(1))
            .unwrap();
        // Two accepted worker replies in the same turn.
        let a = e
            .propose_response(
                c,
                "w1",
                Role::Worker,
                "bring an umbrella",
                None,
                Timestamp(2),
            )
            .unwrap();
        e.cast_vote(
            c,
            a.message_id,
            "w2",
            VoterKind::Human,
            Polarity::Up,
            Timestamp(3),
        )
        .unwrap();
        let b = e
            .propose_response(
                c,
                "w2",
                Role::Worker,
                "yes, later today",
                None,
                Timestamp(4),
            )
            .unwrap();
        e.cast_vote(
            c,
            b.message_id,
            "w3",
            VoterKind::Human,
            Polarity::Up,
            Timestamp(5),
        )
        .unwrap();
        // Accepted despite a downvote: excluded.
        e.post_user_message(c, "thanks", Timestamp(6)).unwrap();
        let d = e
            .propose_response(c, "w1", Role::Worker, "np", None, Timestamp(7))
            .unwrap();
        e.cast_vote(
            c,
            d.message_id,
            "w3",
            VoterKind::Human,
            Polarity::Down,
            Timestamp(8),
        )
        .unwrap();
        e.accept_message(c, d.message_id, Timestamp(9)).unwrap();
        // Bot reply accepted: excluded.
        e.post_user_message(c, "food", Timestamp(10)).unwrap();
        let bm = e
            .propose_response(c, "bot", Role::Bot, "pizza", Some("bot"), Timestamp(11))
            .unwrap();
        e.accept_message(c, bm.message_id, Timestamp(12)).unwrap();

        let pairs = extract_pairs(e.events(), &ExtractionFilter::default()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.query == "is it going to rain"));
        assert_eq!(pairs[0].response, "bring an umbrella");
        assert_eq!(pairs[1].response, "yes, later today");

        let mut filter = ExtractionFilter::default();
        filter.blocked_ids.insert("w1".into());
        let pairs = extract_pairs(e.events(), &filter).unwrap();
        assert_eq!(pairs.len(), 1);
        filter.blocked_ids.insert("u1".into());
        assert!(extract_pairs(e.events(), &filter).unwrap().is_empty());
    }

    #[test]
    fn unanswered_user_messages_are_concatenated() {
        let mut e = Engine::new(RewardSchema::default());
        let c = e
            .open_conversation("u1", PhaseConfig::phase1(), true, Timestamp(0))
            .unwrap();
        e.join_worker(c, "w1", Timestamp(0)).unwrap();
        e.post_user_message(c, "hi", Timestamp(1)).unwrap();
        e.post_user_message(c, "any pizza nearby", Timestamp(2))
            .unwrap();
        e.propose_response(c, "w1", Role::Worker, "try Luigi's", None, Timestamp(3))
            .unwrap();
        let pairs = extract_pairs(e.events(), &ExtractionFilter::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].query, "hi any pizza nearby");
    }

    #[test]
    fn downvoted_pair_file_rejected() {
        let line = r#"{"query":"a","response":"b","votes":{"up":1,"down":1},"source":"x"}"#;
        assert!(matches!(
            parse_pairs(line.as_bytes()),
            Err(RetrievalError::Format { line: 1, .. })
        ));
    }
}
