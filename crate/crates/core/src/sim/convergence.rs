use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::conversation::{ConversationId, MessageId};
use crate::event::{Event, EventKind};
use crate::selector::BetaShape;
use crate::time::Timestamp;

use super::{run_sim, Scenario, SimError, SimResult};

/// The top-ranked bot for one user message in an automated conversation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub ts: Timestamp,
    pub conversation_id: ConversationId,
    pub message_id: MessageId,
    pub topic: Option<String>,
    pub top_bot: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BotWindowMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BotWindowMetrics {
    fn finish(mut self) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        self.precision = ratio(self.tp, self.tp + self.fp);
        self.recall = ratio(self.tp, self.tp + self.fn_);
        self.f1 = if self.precision + self.recall > 0.0 {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        } else {
            0.0
        };
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowReport {
    pub index: usize,
    pub messages: usize,
    pub bots: BTreeMap<String, BotWindowMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PriorPoint {
    pub seq: u64,
    pub ts: Timestamp,
    pub seen: u64,
    pub accepted: u64,
    pub prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub windows: Vec<WindowReport>,
    pub overall: BTreeMap<String, BotWindowMetrics>,
    pub priors: BTreeMap<String, Vec<PriorPoint>>,
}

fn score(
    selections: &[Selection],
    topic_bots: &BTreeMap<String, String>,
    bots: &BTreeSet<String>,
) -> BTreeMap<String, BotWindowMetrics> {
    let mut out: BTreeMap<String, BotWindowMetrics> = bots
        .iter()
        .map(|b| (b.clone(), BotWindowMetrics::default()))
        .collect();
    for s in selections {
        let truth = s.topic.as_ref().and_then(|t| topic_bots.get(t));
        if let Some(top) = &s.top_bot {
            let m = out.entry(top.clone()).or_default();
            if truth == Some(top) {
                m.tp += 1;
            } else {
                m.fp += 1;
            }
        }
        if let Some(t) = truth {
            if s.top_bot.as_ref() != Some(t) {
                out.entry(t.clone()).or_default().fn_ += 1;
            }
        }
    }
    out.into_iter().map(|(k, v)| (k, v.finish())).collect()
}

/// Per-window and overall top-1 precision, recall and F1 for every bot,
/// judged against the topic each message was tagged with.
pub fn selector_report(
    selections: &[Selection],
    topic_bots: &BTreeMap<String, String>,
    window_size: usize,
    priors: BTreeMap<String, Vec<PriorPoint>>,
) -> ConvergenceReport {
    let mut bots: BTreeSet<String> = topic_bots.values().cloned().collect();
    bots.extend(selections.iter().filter_map(|s| s.top_bot.clone()));
    let windows = selections
        .chunks(window_size.max(1))
        .enumerate()
        .map(|(index, chunk)| WindowReport {
            index,
            messages: chunk.len(),
            bots: score(chunk, topic_bots, &bots),
        })
        .collect();
    ConvergenceReport {
        windows,
        overall: score(selections, topic_bots, &bots),
        priors,
    }
}

/// Each bot's smoothed acceptance prior after registration and after every
/// recorded outcome.
pub fn prior_trajectories(
    events: &[Event],
    shape: &BetaShape,
) -> BTreeMap<String, Vec<PriorPoint>> {
    let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut out: BTreeMap<String, Vec<PriorPoint>> = BTreeMap::new();
    let point = |e: &Event, seen: u64, accepted: u64| PriorPoint {
        seq: e.seq,
        ts: e.ts,
        seen,
        accepted,
        prior: (accepted as f64 + shape.alpha) / (seen as f64 + shape.alpha + shape.beta),
    };
    for e in events {
        match &e.kind {
            EventKind::BotRegistered { bot_id, .. } => {
                counts.insert(bot_id.clone(), (0, 0));
                out.insert(bot_id.clone(), vec![point(e, 0, 0)]);
            }
            EventKind::BotOutcome {
                bot_id, accepted, ..
            } => {
                if let Some(c) = counts.get_mut(bot_id) {
                    c.0 += 1;
                    c.1 += u64::from(*accepted);
                    let p = point(e, c.0, c.1);
                    out.entry(bot_id.clone()).or_default().push(p);
                }
            }
            _ => {}
        }
    }
    out
}

/// Runs the scenario and scores the selector's top-1 choice on every
/// topic-tagged user message.
pub fn selector_convergence_experiment(
    scenario: &Scenario,
) -> Result<(ConvergenceReport, SimResult), SimError> {
    let result = run_sim(scenario)?;
    let shape = *result.orchestrator.selector().shape();
    let priors = prior_trajectories(&result.events, &shape);
    let report = selector_report(
        &result.selections,
        &scenario.topic_bots,
        scenario.window_size,
        priors,
    );
    Ok((report, result))
}
