//! Weighted vote acceptance, human co-sign rules and the reward ledger.
//!
//! A candidate is accepted once
//!
//! ```text
//! ups * w_up - downs * w_down >= active_workers * threshold
//! ```
//!
//! and, in addition, any machine upvote is backed by at least one human
//! upvote and bot-origin candidates carry the phase's minimum number of human
//! upvotes. Downvotes only delay acceptance; nothing is ever rejected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conversation::{ConversationId, Message, MessageId, Polarity, Role, Vote, VoterKind};
use crate::phase::PhaseConfig;

/// Slack for comparing vote sums against `active * threshold`, which is not
/// exactly representable for most worker counts.
const WEIGHT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteWeights {
    pub up: f64,
    pub down: f64,
    pub threshold: f64,
}

impl Default for VoteWeights {
    fn default() -> Self {
        Self {
            up: 1.0,
            down: 0.5,
            threshold: 0.4,
        }
    }
}

impl VoteWeights {
    pub fn is_valid(&self) -> bool {
        self.up > 0.0 && self.down > 0.0 && self.threshold > 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VoteTally {
    pub human_up: u32,
    pub human_down: u32,
    pub machine_up: u32,
    pub machine_down: u32,
}

impl VoteTally {
    pub fn from_votes(votes: &[Vote]) -> Self {
        let mut t = VoteTally::default();
        for v in votes {
            match (v.voter_kind, v.polarity) {
                (VoterKind::Human, Polarity::Up) => t.human_up += 1,
                (VoterKind::Human, Polarity::Down) => t.human_down += 1,
                (VoterKind::Machine, Polarity::Up) => t.machine_up += 1,
                (VoterKind::Machine, Polarity::Down) => t.machine_down += 1,
            }
        }
        t
    }

    pub fn ups(&self) -> u32 {
        self.human_up + self.machine_up
    }

    pub fn downs(&self) -> u32 {
        self.human_down + self.machine_down
    }

    pub fn weight(&self, w: &VoteWeights) -> f64 {
        self.ups() as f64 * w.up - self.downs() as f64 * w.down
    }
}

/// The acceptance predicate on an aggregated tally.
pub fn acceptance_holds(
    tally: &VoteTally,
    active_workers: u32,
    weights: &VoteWeights,
    bot_origin: bool,
    min_human_upvotes_bot_msg: u32,
) -> bool {
    let required = active_workers as f64 * weights.threshold;
    if tally.weight(weights) + WEIGHT_EPS < required {
        return false;
    }
    if tally.machine_up > 0 && tally.human_up == 0 {
        return false;
    }
    if bot_origin && tally.human_up < min_human_upvotes_bot_msg {
        return false;
    }
    // Only reachable without upvotes when no workers are active.
    tally.ups() > 0
}

/// Whether `msg` currently satisfies the acceptance rule under `phase`.
pub fn acceptance_check(msg: &Message, phase: &PhaseConfig) -> bool {
    acceptance_holds(
        &VoteTally::from_votes(&msg.votes),
        msg.active_workers,
        &phase.weights,
        msg.role == Role::Bot,
        phase.min_human_upvotes_bot_msg,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgnoreReason {
    Duplicate,
    Terminal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "reason")]
pub enum VoteOutcome {
    Accepted,
    Pending,
    Ignored(IgnoreReason),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSchema {
    pub r_upvote: u64,
    pub r_agreement: u64,
    pub r_proposal: u64,
    pub r_acceptance: u64,
    pub dollars_per_point: f64,
}

impl Default for RewardSchema {
    fn default() -> Self {
        Self {
            r_upvote: 100,
            r_agreement: 500,
            r_proposal: 1000,
            r_acceptance: 0,
            dollars_per_point: 0.0001,
        }
    }
}

impl RewardSchema {
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            r_upvote: self.r_upvote * factor,
            r_agreement: self.r_agreement * factor,
            r_proposal: self.r_proposal * factor,
            r_acceptance: self.r_acceptance * factor,
            dollars_per_point: self.dollars_per_point,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardReason {
    Upvote,
    Agreement,
    Proposal,
    Acceptance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub worker_id: String,
    pub reason: RewardReason,
    pub points: u64,
    pub conversation_id: ConversationId,
    pub message_id: MessageId,
}

/// Grant for a human upvote cast through the voting controls. The proposer's
/// implicit self-upvote does not earn this.
pub fn upvote_grant(msg: &Message, voter_id: &str, schema: &RewardSchema) -> Option<Grant> {
    (schema.r_upvote > 0).then(|| Grant {
        worker_id: voter_id.to_string(),
        reason: RewardReason::Upvote,
        points: schema.r_upvote,
        conversation_id: msg.conversation_id,
        message_id: msg.id,
    })
}

/// Grants owed when `msg` is accepted: agreement to every human upvoter
/// (the proposer's self-upvote included), plus proposal and acceptance
/// rewards to a human proposer. Zero-point grants are omitted.
pub fn grant_rewards_on_accept(msg: &Message, schema: &RewardSchema) -> Vec<Grant> {
    let mut grants = Vec::new();
    let mut push = |worker: &str, reason, points| {
        if points > 0 {
            grants.push(Grant {
                worker_id: worker.to_string(),
                reason,
                points,
                conversation_id: msg.conversation_id,
                message_id: msg.id,
            });
        }
    };
    for v in &msg.votes {
        if v.voter_kind == VoterKind::Human && v.polarity == Polarity::Up {
            push(&v.voter_id, RewardReason::Agreement, schema.r_agreement);
        }
    }
    if msg.role == Role::Worker {
        push(&msg.author, RewardReason::Proposal, schema.r_proposal);
        push(&msg.author, RewardReason::Acceptance, schema.r_acceptance);
    }
    grants
}

/// Per-worker point totals plus the full grant history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    totals: BTreeMap<String, u64>,
    grants: Vec<Grant>,
}

impl RewardLedger {
    pub fn record(&mut self, grant: Grant) {
        *self.totals.entry(grant.worker_id.clone()).or_default() += grant.points;
        self.grants.push(grant);
    }

    pub fn grants(&self) -> &[Grant] {
        &self.grants
    }

    pub fn worker_total(&self, worker_id: &str) -> u64 {
        self.totals.get(worker_id).copied().unwrap_or(0)
    }

    pub fn totals(&self) -> &BTreeMap<String, u64> {
        &self.totals
    }

    pub fn total_points(&self) -> u64 {
        self.totals.values().sum()
    }

    pub fn total_dollars(&self, schema: &RewardSchema) -> f64 {
        self.total_points() as f64 * schema.dollars_per_point
    }

    /// `worker_id,points,dollars` rows, sorted by worker id, with a header.
    pub fn to_csv(&self, schema: &RewardSchema) -> String {
        let mut out = String::from("worker_id,points,dollars\n");
        for (worker, points) in &self.totals {
            out.push_str(&format!(
                "{},{},{}\n",
                worker,
                points,
                *points as f64 * schema.dollars_per_point
            ));
        }
        out
    }
}
