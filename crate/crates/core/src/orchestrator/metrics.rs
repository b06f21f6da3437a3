use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, ConversationId, MessageState, Polarity, Role, VoterKind};
use crate::engine::{Engine, EngineError};
use crate::event::Event;
use crate::voting::{RewardLedger, RewardSchema};

/// Deployment counters for one conversation or a whole log. Ratios over
/// accepted responses are 0 when nothing was accepted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub conversations: usize,
    pub user_messages: usize,
    pub accepted_worker_messages: usize,
    pub accepted_bot_messages: usize,
    pub human_upvotes: usize,
    pub machine_upvotes: usize,
    pub points: u64,
    pub dollars: f64,
    pub automation_fraction: f64,
    pub mean_human_upvotes: f64,
    pub mean_machine_upvotes: f64,
    pub cost_per_message: f64,
}

impl MetricsSummary {
    pub fn accepted_responses(&self) -> usize {
        self.accepted_worker_messages + self.accepted_bot_messages
    }

    fn finish(&mut self, schema: &RewardSchema) {
        self.dollars = self.points as f64 * schema.dollars_per_point;
        let n = self.accepted_responses();
        if n > 0 {
            let n = n as f64;
            self.automation_fraction = self.accepted_bot_messages as f64 / n;
            self.mean_human_upvotes = self.human_upvotes as f64 / n;
            self.mean_machine_upvotes = self.machine_upvotes as f64 / n;
            self.cost_per_message = self.dollars / n;
        }
    }

    fn absorb(&mut self, other: &MetricsSummary) {
        self.conversations += other.conversations;
        self.user_messages += other.user_messages;
        self.accepted_worker_messages += other.accepted_worker_messages;
        self.accepted_bot_messages += other.accepted_bot_messages;
        self.human_upvotes += other.human_upvotes;
        self.machine_upvotes += other.machine_upvotes;
        self.points += other.points;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversationMetrics {
    pub conversation_id: ConversationId,
    pub automation_enabled: bool,
    #[serde(flatten)]
    pub summary: MetricsSummary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub conversations: Vec<ConversationMetrics>,
    pub aggregate: MetricsSummary,
    /// Aggregates over conversations with and without automation.
    pub automated: MetricsSummary,
    pub baseline: MetricsSummary,
}

fn conversation_summary(conv: &Conversation, points: u64) -> MetricsSummary {
    let mut s = MetricsSummary {
        conversations: 1,
        points,
        ..MetricsSummary::default()
    };
    for m in &conv.messages {
        match m.role {
            Role::User => s.user_messages += 1,
            _ if m.state == MessageState::Accepted => {
                if m.role == Role::Bot {
                    s.accepted_bot_messages += 1;
                } else {
                    s.accepted_worker_messages += 1;
                }
                for v in m.votes.iter().filter(|v| v.polarity == Polarity::Up) {
                    match v.voter_kind {
                        VoterKind::Human => s.human_upvotes += 1,
                        VoterKind::Machine => s.machine_upvotes += 1,
                    }
                }
            }
            _ => {}
        }
    }
    s
}

pub fn metrics_from<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
    ledger: &RewardLedger,
    schema: &RewardSchema,
) -> MetricsReport {
    let mut points: BTreeMap<ConversationId, u64> = BTreeMap::new();
    for g in ledger.grants() {
        *points.entry(g.conversation_id).or_default() += g.points;
    }
    let mut report = MetricsReport::default();
    for conv in conversations {
        let mut summary = conversation_summary(conv, points.get(&conv.id).copied().unwrap_or(0));
        report.aggregate.absorb(&summary);
        if conv.automation_enabled {
            report.automated.absorb(&summary);
        } else {
            report.baseline.absorb(&summary);
        }
        summary.finish(schema);
        report.conversations.push(ConversationMetrics {
            conversation_id: conv.id,
            automation_enabled: conv.automation_enabled,
            summary,
        });
    }
    report.aggregate.finish(schema);
    report.automated.finish(schema);
    report.baseline.finish(schema);
    report
}

pub fn engine_metrics(engine: &Engine) -> MetricsReport {
    metrics_from(engine.conversations(), engine.ledger(), engine.schema())
}

/// Replays `events` and reports on every conversation in them.
pub fn compute_metrics(
    events: &[Event],
    schema: &RewardSchema,
) -> Result<MetricsReport, EngineError> {
    let engine = Engine::replay(schema.clone(), events)?;
    Ok(engine_metrics(&engine))
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "conversation_id,automation_enabled,user_messages,accepted_worker_messages,\
             accepted_bot_messages,automation_fraction,mean_human_upvotes,\
             mean_machine_upvotes,points,dollars,cost_per_message\n",
        );
        let mut row = |id: &str, auto: &str, s: &MetricsSummary| {
            out.push_str(&format!(
                "{id},{auto},{},{},{},{:.6},{:.6},{:.6},{},{:.6},{:.6}\n",
                s.user_messages,
                s.accepted_worker_messages,
                s.accepted_bot_messages,
                s.automation_fraction,
                s.mean_human_upvotes,
                s.mean_machine_upvotes,
                s.points,
                s.dollars,
                s.cost_per_message
            ));
        };
        for c in &self.conversations {
            row(
                &c.conversation_id.to_string(),
                if c.automation_enabled {
                    "true"
                } else {
                    "false"
                },
                &c.summary,
            );
        }
        row("all", "", &self.aggregate);
        out
    }
}
