//! Deterministic discrete-event simulation of users, workers and bots
//! driving the real orchestrator in virtual time.

mod convergence;
mod monte_carlo;
mod scenario;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bots::{
    Bot, BotContext, BotError, BotResponse, BotSpec, BuildContext, Registry, RegistryError,
};
use crate::conversation::{ConversationId, MessageId, MessageState, Polarity, Role};
use crate::embedding::{tokenize, EmbeddingError, VectorTable};
use crate::event::{CloseReason, Event, EventKind, NullSink};
use crate::orchestrator::{
    assign_automation, engine_metrics, Components, MetricsReport, Orchestrator, OrchestratorError,
    Settings, TickReport,
};
use crate::time::Timestamp;
use crate::voter::{VoteClassifierModel, VoterError};

pub use convergence::{
    prior_trajectories, selector_convergence_experiment, selector_report, BotWindowMetrics,
    ConvergenceReport, PriorPoint, Selection, WindowReport,
};
pub use monte_carlo::{monte_carlo_reward, MonteCarloEstimate};
pub use scenario::{
    ConversationScript, Scenario, ScenarioError, SimBot, SimBotKind, UserTurn, WorkerPolicy,
};

/// Virtual clock resolution in milliseconds.
pub const GRANULARITY_MS: u64 = 100;
const IDLE_SWEEP_MS: u64 = 60_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Voter(#[from] VoterError),
}

fn quantize(ms: f64) -> u64 {
    let ms = ms.max(0.0).round() as u64;
    (ms + GRANULARITY_MS / 2) / GRANULARITY_MS * GRANULARITY_MS
}

fn secs(s: f64) -> u64 {
    quantize(s * 1000.0)
}

/// Keyword-triggered canned replies.
struct ScriptedBot {
    replies: BTreeMap<String, String>,
    default_reply: Option<String>,
}

impl Bot for ScriptedBot {
    fn respond(&self, ctx: &BotContext, _: &mut ChaCha8Rng) -> Result<BotResponse, BotError> {
        let tokens = tokenize(&ctx.user_message);
        let hit = self
            .replies
            .iter()
            .find(|(k, _)| tokens.iter().any(|t| t == &k.to_lowercase()))
            .map(|(_, v)| v.clone());
        Ok(match hit.or_else(|| self.default_reply.clone()) {
            Some(t) => BotResponse::text(t),
            None => BotResponse::decline(),
        })
    }
}

#[derive(Clone, Debug)]
enum Action {
    Open(usize),
    Join(usize, usize),
    Leave(usize, usize),
    User(usize, usize),
    Propose(usize, usize, MessageId),
    Vote(usize, usize, MessageId),
    Tick(usize),
    Sweep,
}

#[derive(Clone, Debug, Serialize)]
pub struct TickTrace {
    pub ts: Timestamp,
    pub report: TickReport,
}

pub struct SimResult {
    pub events: Vec<Event>,
    pub metrics: MetricsReport,
    pub ticks: Vec<TickTrace>,
    pub selections: Vec<Selection>,
    /// Ground-truth quality of every candidate.
    pub quality: BTreeMap<MessageId, bool>,
    pub orchestrator: Orchestrator,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    orch: Orchestrator,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Reverse<(u64, u64, usize)>>,
    actions: Vec<Action>,
    convs: Vec<Option<ConversationId>>,
    index_of: HashMap<ConversationId, usize>,
    proposals_made: HashMap<(usize, usize), usize>,
    quality: BTreeMap<MessageId, bool>,
    topics: HashMap<MessageId, Option<String>>,
    bots: HashMap<String, &'a SimBot>,
    cursor: usize,
    ticks: Vec<TickTrace>,
    selections: Vec<Selection>,
    end_ms: u64,
}

fn build_table(s: &Scenario) -> Result<Arc<VectorTable>, SimError> {
    Ok(Arc::new(match &s.embedding_path {
        Some(p) => VectorTable::load(p)?,
        None => VectorTable::from_entries(s.embedding_dim, s.embedding.clone())?,
    }))
}

fn build_components(s: &Scenario, table: Arc<VectorTable>) -> Result<Components, SimError> {
    let ctx = BuildContext::new(Arc::clone(&table));
    let mut registry = Registry::new();
    for b in &s.bots {
        match (&b.kind, b.kind.builtin()) {
            (_, Some(kind)) => {
                let spec = BotSpec {
                    bot_id: b.bot_id.clone(),
                    kind,
                    example_messages: b.example_messages.clone(),
                };
                let built = Registry::from_specs(vec![spec.clone()], &ctx)?;
                let bot = Arc::clone(built.get(&b.bot_id).expect("just built"));
                registry.insert(spec, bot)?;
            }
            (
                SimBotKind::Scripted {
                    replies,
                    default_reply,
                },
                None,
            ) => {
                let spec = BotSpec {
                    bot_id: b.bot_id.clone(),
                    kind: crate::bots::BotKind::Custom,
                    example_messages: b.example_messages.clone(),
                };
                let bot = Arc::new(ScriptedBot {
                    replies: replies.clone(),
                    default_reply: default_reply.clone(),
                });
                registry.insert(spec, bot)?;
            }
            _ => unreachable!("only scripted bots lack a builtin kind"),
        }
    }
    let voter = s
        .voter_model_path
        .as_ref()
        .map(VoteClassifierModel::load)
        .transpose()?;
    Ok(Components {
        table,
        registry,
        chorus_store: ctx.chorus_store,
        voter,
    })
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, at_ms: u64, action: Action) {
        let order = self.actions.len() as u64;
        self.actions.push(action);
        self.heap
            .push(Reverse((quantize(at_ms as f64), order, order as usize)));
    }

    fn latency(&mut self, (lo, hi): (f64, f64)) -> u64 {
        if hi > lo {
            secs(self.rng.random_range(lo..=hi))
        } else {
            secs(lo)
        }
    }

    fn worker(&self, conv: usize, w: usize) -> &'a WorkerPolicy {
        &self.scenario.conversations[conv].workers[w]
    }

    fn conv_id(&self, conv: usize) -> Option<ConversationId> {
        self.convs[conv]
    }

    fn is_open(&self, conv: usize) -> bool {
        self.conv_id(conv)
            .and_then(|id| self.orch.conversation(id).ok())
            .is_some_and(|c| !c.closed)
    }

    fn active(&self, conv: usize, w: usize) -> bool {
        let Some(id) = self.conv_id(conv) else {
            return false;
        };
        let worker = &self.worker(conv, w).worker_id;
        self.orch
            .conversation(id)
            .is_ok_and(|c| !c.closed && c.is_active_worker(worker))
    }

    fn run_action(&mut self, now_ms: u64, action: Action) -> Result<(), SimError> {
        let now = Timestamp(now_ms);
        match action {
            Action::Open(ci) => {
                let script = &self.scenario.conversations[ci];
                let phase = self.scenario.phase_config()?;
                let automated = script.automation.unwrap_or_else(|| {
                    assign_automation(ci as u64, phase.automation_fraction, self.scenario.seed)
                });
                let id = self.orch.open_conversation_with(
                    &script.user_id,
                    phase.clone(),
                    automated,
                    now,
                )?;
                self.convs[ci] = Some(id);
                self.index_of.insert(id, ci);
                let start = now_ms;
                for (wi, w) in script.workers.iter().enumerate() {
                    self.schedule(start + secs(w.join_secs), Action::Join(ci, wi));
                    if let Some(l) = w.leave_secs {
                        self.schedule(start + secs(l), Action::Leave(ci, wi));
                    }
                }
                for (mi, m) in script.messages.iter().enumerate() {
                    self.schedule(start + secs(m.at_secs), Action::User(ci, mi));
                }
                if automated {
                    let tick = phase.chatbot_tick_seconds * 1000;
                    self.schedule(start + tick, Action::Tick(ci));
                }
            }
            Action::Join(ci, wi) => {
                if self.is_open(ci) && !self.active(ci, wi) {
                    let id = self.conv_id(ci).expect("open");
                    let worker = self.worker(ci, wi).worker_id.clone();
                    let c = self.orch.conversation(id)?;
                    if c.currently_active() < c.phase.max_workers {
                        self.orch.join_worker(id, &worker, now)?;
                    }
                }
            }
            Action::Leave(ci, wi) => {
                if self.active(ci, wi) {
                    let id = self.conv_id(ci).expect("open");
                    let worker = self.worker(ci, wi).worker_id.clone();
                    self.orch.leave_worker(id, &worker, now)?;
                }
            }
            Action::User(ci, mi) => {
                if self.is_open(ci) {
                    let id = self.conv_id(ci).expect("open");
                    let turn = &self.scenario.conversations[ci].messages[mi];
                    let msg = self.orch.post_user_message(id, &turn.text, now)?;
                    self.topics.insert(msg, turn.topic.clone());
                }
            }
            Action::Propose(ci, wi, user_msg) => {
                if self.active(ci, wi) && !self.answered(ci, user_msg) {
                    let id = self.conv_id(ci).expect("open");
                    let policy = self.worker(ci, wi);
                    let n = self.proposals_made.entry((ci, wi)).or_default();
                    let text = if policy.script.is_empty() {
                        format!("{} reply {}", policy.worker_id, *n + 1)
                    } else {
                        policy.script[*n % policy.script.len()].clone()
                    };
                    *n += 1;
                    let good = self.rng.random_bool(policy.p_good_proposal);
                    let p = self.orch.propose(id, &policy.worker_id, &text, now)?;
                    self.quality.insert(p.message_id, good);
                }
            }
            Action::Vote(ci, wi, msg) => {
                if self.active(ci, wi) {
                    let id = self.conv_id(ci).expect("open");
                    let policy = self.worker(ci, wi);
                    let conv = self.orch.conversation(id)?;
                    let pending = conv.message(msg).is_some_and(|m| {
                        m.state == MessageState::Proposed && !m.has_voted(&policy.worker_id)
                    });
                    if pending {
                        let good = self.quality.get(&msg).copied().unwrap_or(false);
                        let correct = self.rng.random_bool(policy.p_correct);
                        let polarity = if good == correct {
                            Polarity::Up
                        } else {
                            Polarity::Down
                        };
                        self.orch.vote(id, msg, &policy.worker_id, polarity, now)?;
                    }
                }
            }
            Action::Tick(ci) => {
                if self.is_open(ci) {
                    let id = self.conv_id(ci).expect("open");
                    let report = self.orch.run_tick(id, now)?;
                    if !report.actions.is_empty() || !report.invoked.is_empty() {
                        self.ticks.push(TickTrace { ts: now, report });
                    }
                    let tick = self.orch.conversation(id)?.phase.chatbot_tick_seconds * 1000;
                    self.schedule(now_ms + tick, Action::Tick(ci));
                }
            }
            Action::Sweep => {
                self.orch.close_idle(now)?;
                self.schedule(now_ms + IDLE_SWEEP_MS, Action::Sweep);
            }
        }
        Ok(())
    }

    /// Reacts to newly logged events: workers answer user messages and vote
    /// on fresh candidates; bot candidates get their quality tag.
    fn observe(&mut self, now_ms: u64) {
        while self.cursor < self.orch.engine().events().len() {
            let event = self.orch.engine().events()[self.cursor].clone();
            self.cursor += 1;
            let Some(&ci) = event
                .kind
                .conversation_id()
                .and_then(|id| self.index_of.get(&id))
            else {
                continue;
            };
            match &event.kind {
                EventKind::UserMessage {
                    message_id, text, ..
                } => {
                    self.record_selection(ci, *message_id, text, event.ts);
                    if self.answered(ci, *message_id) {
                        continue;
                    }
                    for wi in 0..self.scenario.conversations[ci].workers.len() {
                        if !self.active(ci, wi) {
                            continue;
                        }
                        let policy = self.worker(ci, wi);
                        if self.rng.random_bool(policy.propose_prob) {
                            let d = self.latency(policy.propose_latency_secs);
                            self.schedule(now_ms + d, Action::Propose(ci, wi, *message_id));
                        }
                    }
                }
                EventKind::MessageProposed {
                    message_id,
                    author,
                    role,
                    origin_bot,
                    ..
                } => {
                    if *role == Role::Bot {
                        let good = self.bot_quality(ci, *message_id, origin_bot.as_deref());
                        self.quality.insert(*message_id, good);
                    }
                    for wi in 0..self.scenario.conversations[ci].workers.len() {
                        let policy = self.worker(ci, wi);
                        if &policy.worker_id == author || !self.active(ci, wi) {
                            continue;
                        }
                        if self.rng.random_bool(policy.vote_prob) {
                            let d = self.latency(policy.vote_latency_secs);
                            self.schedule(now_ms + d, Action::Vote(ci, wi, *message_id));
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Whether the turn opened by `user_msg` already has an accepted reply.
    fn answered(&self, ci: usize, user_msg: MessageId) -> bool {
        let Some(conv) = self.convs[ci].and_then(|id| self.orch.conversation(id).ok()) else {
            return true;
        };
        let Some(turn) = conv.message(user_msg).map(|m| m.turn) else {
            return true;
        };
        conv.messages_in_turn(turn)
            .any(|m| !m.is_user() && m.state == MessageState::Accepted)
    }

    fn bot_quality(&self, ci: usize, candidate: MessageId, bot: Option<&str>) -> bool {
        let Some(spec) = bot.and_then(|b| self.bots.get(b)) else {
            return false;
        };
        let topic = self.convs[ci]
            .and_then(|id| self.orch.conversation(id).ok())
            .and_then(|c| {
                let turn = c.message(candidate)?.turn;
                c.turn_opener(turn).map(|m| m.id)
            })
            .and_then(|m| self.topics.get(&m).cloned().flatten());
        spec.is_good_for(topic.as_deref())
    }

    fn record_selection(&mut self, ci: usize, message_id: MessageId, text: &str, ts: Timestamp) {
        let Some(id) = self.convs[ci] else { return };
        let automated = self
            .orch
            .conversation(id)
            .is_ok_and(|c| c.automation_enabled);
        if !automated {
            return;
        }
        let topic = self.topics.get(&message_id).cloned().flatten();
        let top = self
            .orch
            .selector()
            .rank_text(text, self.orch.table())
            .ok()
            .and_then(|ranked| {
                ranked
                    .into_iter()
                    .find(|r| self.orch.registry().get(&r.bot_id).is_some())
            })
            .map(|r| r.bot_id);
        self.selections.push(Selection {
            ts,
            conversation_id: id,
            message_id,
            topic,
            top_bot: top,
        });
    }
}

/// Runs a scenario to completion. Identical scenarios give identical logs.
pub fn run_sim(scenario: &Scenario) -> Result<SimResult, SimError> {
    scenario.validate()?;
    let table = build_table(scenario)?;
    let components = build_components(scenario, Arc::clone(&table))?;
    let settings = Settings {
        seed: scenario.seed,
        shape: scenario
            .selector
            .shape()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
        seen_policy: scenario.selector.seen_policy,
        default_phase: scenario.phase_config()?,
        idle_timeout: std::time::Duration::from_secs(scenario.idle_timeout_secs),
        bot_deadline: None,
    };
    let orch = Orchestrator::new(
        scenario.rewards.clone(),
        components,
        settings,
        Box::new(NullSink),
        Timestamp(0),
    )?;
    let mut sim = Sim {
        scenario,
        orch,
        rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5e_ed_0f_5a_11),
        heap: BinaryHeap::new(),
        actions: Vec::new(),
        convs: vec![None; scenario.conversations.len()],
        index_of: HashMap::new(),
        proposals_made: HashMap::new(),
        quality: BTreeMap::new(),
        topics: HashMap::new(),
        bots: scenario
            .bots
            .iter()
            .map(|b| (b.bot_id.clone(), b))
            .collect(),
        cursor: 0,
        ticks: Vec::new(),
        selections: Vec::new(),
        end_ms: secs(scenario.duration_secs),
    };
    for (ci, c) in scenario.conversations.iter().enumerate() {
        sim.schedule(secs(c.start_secs), Action::Open(ci));
    }
    sim.schedule(IDLE_SWEEP_MS, Action::Sweep);
    let mut last = 0;
    while let Some(Reverse((at, _, idx))) = sim.heap.pop() {
        if at > sim.end_ms {
            break;
        }
        debug_assert!(at >= last, "virtual time went backwards");
        last = at;
        let action = sim.actions[idx].clone();
        sim.run_action(at, action)?;
        sim.observe(at);
    }
    let end = Timestamp(sim.end_ms);
    let open: Vec<ConversationId> = sim
        .orch
        .engine()
        .conversations()
        .filter(|c| !c.closed)
        .map(|c| c.id)
        .collect();
    for id in open {
        sim.orch
            .close_conversation(id, CloseReason::Explicit, end)?;
    }
    sim.observe(sim.end_ms);
    Ok(SimResult {
        events: sim.orch.engine().events().to_vec(),
        metrics: engine_metrics(sim.orch.engine()),
        ticks: sim.ticks,
        selections: sim.selections,
        quality: sim.quality,
        orchestrator: sim.orch,
    })
}
