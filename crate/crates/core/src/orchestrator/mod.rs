//! Live coordination: bot and vote-bot ticks, selector feedback, online
//! pair collection and idle handling on top of the event-sourced engine.

mod config;
mod metrics;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;
use tracing::{debug, info};

use crate::bots::{
    invoke, invoke_all, Bot, BotContext, BotKind, BotReply, BotSpec, BuildContext,
    FixtureRestaurants, FixtureWeather, Gazetteer, ProviderError, Registry, RegistryError,
};
use crate::conversation::{
    Conversation, ConversationId, MessageId, MessageState, Polarity, Role, VoterKind,
};
use crate::embedding::{EmbeddingError, VectorTable};
use crate::engine::{Engine, EngineError, Proposal};
use crate::event::{
    read_jsonl, CloseReason, Event, EventKind, EventSink, JsonlSink, LogError, NullSink,
};
use crate::phase::{BotPolicy, PhaseConfig};
use crate::retrieval::{
    build_store, pair_for_message, read_pairs, ExtractionFilter, PairStore, RetrievalError,
};
use crate::selector::{select_bots, BetaShape, SeenPolicy, Selector};
use crate::time::Timestamp;
use crate::voter::{maybe_vote_at, VoteClassifierModel, VoteDecision, VoterError, VOTE_BOT_ID};
use crate::voting::{RewardSchema, VoteOutcome};

pub use config::{ConfigError, OrchestratorConfig, SelectorConfig};
pub use metrics::{
    compute_metrics, engine_metrics, metrics_from, ConversationMetrics, MetricsReport,
    MetricsSummary,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Voter(#[from] VoterError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seeded A/B assignment of automation to the `seq`-th conversation.
pub fn assign_automation(seq: u64, fraction: f64, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq);
    rng.random::<f64>() < fraction
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub shape: BetaShape,
    pub seen_policy: SeenPolicy,
    pub default_phase: PhaseConfig,
    pub idle_timeout: Duration,
    /// `None` runs bots inline on the caller's thread, as the simulator
    /// does.
    pub bot_deadline: Option<Duration>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            shape: BetaShape::default(),
            seen_policy: SeenPolicy::default(),
            default_phase: PhaseConfig::default(),
            idle_timeout: Duration::from_secs(600),
            bot_deadline: None,
        }
    }
}

impl Settings {
    pub fn from_config(cfg: &OrchestratorConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            seed: cfg.seed,
            shape: cfg.selector.shape()?,
            seen_policy: cfg.selector.seen_policy,
            default_phase: cfg.phase_config()?,
            idle_timeout: cfg.idle_timeout(),
            bot_deadline: Some(cfg.bot_deadline()),
        })
    }
}

/// Everything the orchestrator consults besides the log.
pub struct Components {
    pub table: Arc<VectorTable>,
    pub registry: Registry,
    pub chorus_store: Arc<RwLock<PairStore>>,
    pub voter: Option<VoteClassifierModel>,
}

impl Components {
    /// The default bot line-up over `table` with an empty chorus store.
    pub fn with_default_bots(table: Arc<VectorTable>) -> Result<Self, RegistryError> {
        let ctx = BuildContext::new(Arc::clone(&table));
        let registry = Registry::from_specs(Registry::default_specs(), &ctx)?;
        Ok(Self {
            table,
            registry,
            chorus_store: ctx.chorus_store,
            voter: None,
        })
    }

    pub fn without_bots(table: Arc<VectorTable>) -> Self {
        let dim = table.dim();
        Self {
            table,
            registry: Registry::new(),
            chorus_store: Arc::new(RwLock::new(PairStore::new(dim))),
            voter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TickAction {
    Proposed {
        bot_id: String,
        message_id: MessageId,
        accepted: bool,
    },
    Declined {
        bot_id: String,
        reason: String,
    },
    MachineVote {
        message_id: MessageId,
        confidence: f64,
        accepted: bool,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TickReport {
    pub conversation_id: ConversationId,
    pub invoked: Vec<String>,
    pub actions: Vec<TickAction>,
}

impl TickReport {
    pub fn proposals(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, TickAction::Proposed { .. }))
            .count()
    }

    pub fn machine_votes(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, TickAction::MachineVote { .. }))
            .count()
    }
}

/// Bots chosen for one tick. Built under the orchestrator's lock, executed
/// outside it, then handed back to [`Orchestrator::finish_tick`].
pub struct TickPlan {
    pub conversation_id: ConversationId,
    pub user_message_id: Option<MessageId>,
    pub context: Option<Arc<BotContext>>,
    pub calls: Vec<(String, Arc<dyn Bot>, u64)>,
    pub deadline: Option<Duration>,
}

impl TickPlan {
    /// Invokes the planned bots; safe to run without holding any lock.
    pub fn execute(&self) -> Vec<BotReply> {
        let Some(ctx) = &self.context else {
            return Vec::new();
        };
        match self.deadline {
            None => self
                .calls
                .iter()
                .map(|(_, bot, seed)| invoke(bot.as_ref(), ctx, *seed))
                .collect(),
            Some(d) => invoke_all(
                self.calls
                    .iter()
                    .map(|(_, bot, seed)| (Arc::clone(bot), *seed))
                    .collect(),
                Arc::clone(ctx),
                d,
            ),
        }
    }
}

/// Which (conversation, bot, user message) outcomes were already fed back.
#[derive(Clone, Debug, Default)]
struct OutcomeTracker {
    registered_at: std::collections::BTreeMap<String, u64>,
    recorded: BTreeSet<(ConversationId, String, MessageId)>,
}

pub struct Orchestrator {
    engine: Engine,
    selector: Selector,
    table: Arc<VectorTable>,
    registry: Registry,
    chorus_store: Arc<RwLock<PairStore>>,
    voter: Option<Arc<VoteClassifierModel>>,
    settings: Settings,
    tracker: OutcomeTracker,
    folded: usize,
    opened: u64,
}

impl Orchestrator {
    pub fn new(
        schema: RewardSchema,
        components: Components,
        settings: Settings,
        sink: Box<dyn EventSink>,
        now: Timestamp,
    ) -> Result<Self, OrchestratorError> {
        Self::resume(&[], schema, components, settings, sink, now)
    }

    /// Rebuilds from a recorded log, then registers any registry bot the
    /// log does not know yet. New events go to `sink`.
    pub fn resume(
        events: &[Event],
        schema: RewardSchema,
        components: Components,
        settings: Settings,
        sink: Box<dyn EventSink>,
        now: Timestamp,
    ) -> Result<Self, OrchestratorError> {
        let mut engine = Engine::replay(schema, events)?;
        engine.set_sink(sink);
        let mut orch = Self {
            selector: Selector::new(settings.shape, settings.seen_policy, components.table.dim()),
            engine,
            table: components.table,
            registry: components.registry,
            chorus_store: components.chorus_store,
            voter: components.voter.map(Arc::new),
            settings,
            tracker: OutcomeTracker::default(),
            folded: 0,
            opened: 0,
        };
        orch.fold_pending();
        let missing: Vec<(String, Vec<String>)> = orch
            .registry
            .specs()
            .filter(|s| !orch.engine.is_registered_bot(&s.bot_id))
            .map(|s| (s.bot_id.clone(), s.example_messages.clone()))
            .collect();
        for (id, examples) in missing {
            orch.engine.register_bot(&id, examples, now)?;
        }
        orch.sync(now)?;
        Ok(orch)
    }

    /// Builds everything a config file names and resumes from its log.
    pub fn from_config(
        cfg: &OrchestratorConfig,
        now: Timestamp,
    ) -> Result<Self, OrchestratorError> {
        let settings = Settings::from_config(cfg)?;
        let table = Arc::new(match &cfg.embedding_path {
            Some(p) => VectorTable::load(p)?,
            None => VectorTable::new(cfg.embedding_dim),
        });
        let mut ctx = BuildContext::new(Arc::clone(&table));
        if let Some(p) = &cfg.gazetteer_path {
            ctx.gazetteer = Arc::new(Gazetteer::load(p)?);
        }
        ctx.weather = Arc::new(FixtureWeather::builtin());
        ctx.restaurants = Arc::new(FixtureRestaurants::builtin());
        if let Some(p) = &cfg.chorus_pairs_path {
            let store = build_store(read_pairs(p)?, &table).store;
            ctx.chorus_store = Arc::new(RwLock::new(store));
        }
        let registry = match &cfg.registry_path {
            Some(p) => Registry::load(p, &ctx)?,
            None => Registry::from_specs(Registry::default_specs(), &ctx)?,
        };
        let voter = cfg
            .voter_model_path
            .as_ref()
            .map(VoteClassifierModel::load)
            .transpose()?;
        let components = Components {
            table,
            registry,
            chorus_store: ctx.chorus_store,
            voter,
        };
        let (events, sink): (Vec<Event>, Box<dyn EventSink>) = match &cfg.log_path {
            Some(p) if p.exists() => (read_jsonl(p)?, Box::new(JsonlSink::append_to(p)?)),
            Some(p) => (Vec::new(), Box::new(JsonlSink::create(p)?)),
            None => (Vec::new(), Box::new(NullSink)),
        };
        info!(events = events.len(), "resuming from log");
        Self::resume(
            &events,
            cfg.rewards.clone(),
            components,
            settings,
            sink,
            now,
        )
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    pub fn table(&self) -> &Arc<VectorTable> {
        &self.table
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn chorus_store(&self) -> &Arc<RwLock<PairStore>> {
        &self.chorus_store
    }

    pub fn voter(&self) -> Option<&Arc<VoteClassifierModel>> {
        self.voter.as_ref()
    }

    /// Swaps in a retrained vote model.
    pub fn set_voter(&mut self, model: Option<VoteClassifierModel>) {
        self.voter = model.map(Arc::new);
    }

    pub fn conversation(&self, id: ConversationId) -> Result<&Conversation, OrchestratorError> {
        Ok(self.engine.conversation(id)?)
    }

    pub fn metrics(&self) -> MetricsReport {
        engine_metrics(&self.engine)
    }

    /// Applies derived state for events not yet folded, without writing.
    fn fold_pending(&mut self) {
        while self.folded < self.engine.events().len() {
            let event = self.engine.events()[self.folded].clone();
            self.folded += 1;
            self.fold(&event);
        }
    }

    fn fold(&mut self, event: &Event) {
        match &event.kind {
            EventKind::BotRegistered {
                bot_id,
                example_messages,
            } => {
                self.tracker.registered_at.insert(bot_id.clone(), event.seq);
                let _ = self.selector.register_bot(
                    bot_id,
                    example_messages.clone(),
                    &self.table,
                    event.ts,
                );
            }
            EventKind::ConversationOpened { .. } => self.opened += 1,
            EventKind::UserMessage { text, .. } => {
                self.selector.observe_user_message(text, &self.table);
            }
            EventKind::MessageAccepted {
                conversation_id,
                message_id,
            } => {
                let Ok(conv) = self.engine.conversation(*conversation_id) else {
                    return;
                };
                let Some(msg) = conv.message(*message_id) else {
                    return;
                };
                if let Some(pair) = pair_for_message(conv, msg, &ExtractionFilter::default()) {
                    if let Ok(mut store) = self.chorus_store.write() {
                        store.push(pair, &self.table);
                    }
                }
            }
            EventKind::BotOutcome {
                conversation_id,
                bot_id,
                user_message_id,
                accepted,
            } => {
                self.tracker
                    .recorded
                    .insert((*conversation_id, bot_id.clone(), *user_message_id));
                let text = self
                    .engine
                    .conversation(*conversation_id)
                    .ok()
                    .and_then(|c| c.message(*user_message_id))
                    .map(|m| m.text.clone())
                    .unwrap_or_default();
                let _ = self
                    .selector
                    .record_outcome(bot_id, &text, *accepted, &self.table);
            }
            _ => {}
        }
    }

    /// Folds new events and writes the selector feedback they imply.
    fn sync(&mut self, now: Timestamp) -> Result<(), OrchestratorError> {
        while self.folded < self.engine.events().len() {
            let event = self.engine.events()[self.folded].clone();
            self.folded += 1;
            self.fold(&event);
            self.react(&event, now)?;
        }
        Ok(())
    }

    fn react(&mut self, event: &Event, now: Timestamp) -> Result<(), OrchestratorError> {
        let Some(conv_id) = event.kind.conversation_id() else {
            return Ok(());
        };
        let automated = self
            .engine
            .conversation(conv_id)
            .map(|c| c.automation_enabled)
            .unwrap_or(false);
        if !automated {
            return Ok(());
        }
        match &event.kind {
            EventKind::MessageAccepted { message_id, .. }
            | EventKind::MessageExpired { message_id, .. } => {
                let accepted = matches!(event.kind, EventKind::MessageAccepted { .. });
                let conv = self.engine.conversation(conv_id)?;
                let Some(msg) = conv.message(*message_id) else {
                    return Ok(());
                };
                let (Some(bot), Role::Bot) = (msg.origin_bot.clone(), msg.role) else {
                    return Ok(());
                };
                let Some(user_msg) = conv.turn_opener(msg.turn).map(|m| m.id) else {
                    return Ok(());
                };
                let key = (conv_id, bot.clone(), user_msg);
                let per_message = self.selector.policy() == SeenPolicy::PerUserMessage;
                if per_message && !self.tracker.recorded.insert(key) {
                    return Ok(());
                }
                self.engine
                    .record_bot_outcome(conv_id, &bot, user_msg, accepted, now)?;
            }
            EventKind::UserMessage { .. } => {
                let turn = self.engine.conversation(conv_id)?.turn_index;
                if turn > 1 {
                    self.settle_silent_bots(conv_id, turn - 1, now)?;
                }
            }
            EventKind::ConversationClosed { .. } => {
                let turn = self.engine.conversation(conv_id)?.turn_index;
                if turn > 0 {
                    self.settle_silent_bots(conv_id, turn, now)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Records a miss for every bot that was online for the user message
    /// opening `turn` but never proposed anything for it.
    fn settle_silent_bots(
        &mut self,
        conv_id: ConversationId,
        turn: u32,
        now: Timestamp,
    ) -> Result<(), OrchestratorError> {
        if self.selector.policy() != SeenPolicy::PerUserMessage {
            return Ok(());
        }
        let conv = self.engine.conversation(conv_id)?;
        let Some(opener) = conv.turn_opener(turn) else {
            return Ok(());
        };
        let user_msg = opener.id;
        let opened_seq = opener.created_seq;
        let proposed: BTreeSet<&str> = conv
            .messages_in_turn(turn)
            .filter_map(|m| m.origin_bot.as_deref())
            .collect();
        let silent: Vec<String> = self
            .tracker
            .registered_at
            .iter()
            .filter(|(bot, seq)| {
                **seq < opened_seq
                    && !proposed.contains(bot.as_str())
                    && !self
                        .tracker
                        .recorded
                        .contains(&(conv_id, (*bot).clone(), user_msg))
            })
            .map(|(bot, _)| bot.clone())
            .collect();
        for bot in silent {
            self.tracker
                .recorded
                .insert((conv_id, bot.clone(), user_msg));
            self.engine
                .record_bot_outcome(conv_id, &bot, user_msg, false, now)?;
        }
        Ok(())
    }

    pub fn register_bot(
        &mut self,
        bot_id: &str,
        bot: Arc<dyn Bot>,
        example_messages: Vec<String>,
        now: Timestamp,
    ) -> Result<(), OrchestratorError> {
        let spec = BotSpec {
            bot_id: bot_id.to_string(),
            kind: BotKind::Custom,
            example_messages: example_messages.clone(),
        };
        if !self.engine.is_registered_bot(bot_id) {
            self.engine.register_bot(bot_id, example_messages, now)?;
        }
        self.registry.insert(spec, bot)?;
        self.sync(now)
    }

    /// Opens a conversation under the default phase, with automation
    /// assigned by the seeded A/B split.
    pub fn open_conversation(
        &mut self,
        user_id: &str,
        now: Timestamp,
    ) -> Result<ConversationId, OrchestratorError> {
        let phase = self.settings.default_phase.clone();
        let automated =
            assign_automation(self.opened, phase.automation_fraction, self.settings.seed);
        self.open_conversation_with(user_id, phase, automated, now)
    }

    pub fn open_conversation_with(
        &mut self,
        user_id: &str,
        phase: PhaseConfig,
        automation_enabled: bool,
        now: Timestamp,
    ) -> Result<ConversationId, OrchestratorError> {
        let id = self
            .engine
            .open_conversation(user_id, phase, automation_enabled, now)?;
        self.sync(now)?;
        Ok(id)
    }

    pub fn join_worker(
        &mut self,
        conv: ConversationId,
        worker_id: &str,
        now: Timestamp,
    ) -> Result<(), OrchestratorError> {
        self.engine.join_worker(conv, worker_id, now)?;
        self.sync(now)
    }

    pub fn leave_worker(
        &mut self,
        conv: ConversationId,
        worker_id: &str,
        now: Timestamp,
    ) -> Result<bool, OrchestratorError> {
        let closed = self.engine.leave_worker(conv, worker_id, now)?;
        self.sync(now)?;
        Ok(closed)
    }

    pub fn post_user_message(
        &mut self,
        conv: ConversationId,
        text: &str,
        now: Timestamp,
    ) -> Result<MessageId, OrchestratorError> {
        let id = self.engine.post_user_message(conv, text, now)?;
        self.sync(now)?;
        Ok(id)
    }

    pub fn propose(
        &mut self,
        conv: ConversationId,
        worker_id: &str,
        text: &str,
        now: Timestamp,
    ) -> Result<Proposal, OrchestratorError> {
        let p = self
            .engine
            .propose_response(conv, worker_id, Role::Worker, text, None, now)?;
        self.sync(now)?;
        Ok(p)
    }

    pub fn vote(
        &mut self,
        conv: ConversationId,
        message_id: MessageId,
        worker_id: &str,
        polarity: Polarity,
        now: Timestamp,
    ) -> Result<VoteOutcome, OrchestratorError> {
        let outcome =
            self.engine
                .cast_vote(conv, message_id, worker_id, VoterKind::Human, polarity, now)?;
        self.sync(now)?;
        Ok(outcome)
    }

    pub fn add_fact(
        &mut self,
        conv: ConversationId,
        author: &str,
        text: &str,
        now: Timestamp,
    ) -> Result<(), OrchestratorError> {
        self.engine.add_fact(conv, author, text, now)?;
        self.sync(now)
    }

    pub fn close_conversation(
        &mut self,
        conv: ConversationId,
        reason: CloseReason,
        now: Timestamp,
    ) -> Result<(), OrchestratorError> {
        self.engine.close_conversation(conv, reason, now)?;
        self.sync(now)
    }

    /// Closes every open conversation idle for at least the configured
    /// timeout. Returns the closed ids.
    pub fn close_idle(&mut self, now: Timestamp) -> Result<Vec<ConversationId>, OrchestratorError> {
        let limit = self.settings.idle_timeout.as_millis() as u64;
        let idle: Vec<ConversationId> = self
            .engine
            .conversations()
            .filter(|c| !c.closed && now.since(c.last_activity) >= limit)
            .map(|c| c.id)
            .collect();
        for id in &idle {
            self.close_conversation(*id, CloseReason::IdleTimeout, now)?;
        }
        Ok(idle)
    }

    /// Bot ids that are both registered in the log and buildable.
    fn available_bots(&self) -> Vec<String> {
        self.registry
            .ids()
            .filter(|id| self.engine.is_registered_bot(id))
            .map(str::to_string)
            .collect()
    }

    /// Chooses the bots for this tick. `None` when the conversation is
    /// closed or not automated.
    pub fn prepare_tick(
        &mut self,
        conv_id: ConversationId,
    ) -> Result<Option<TickPlan>, OrchestratorError> {
        let conv = self.engine.conversation(conv_id)?;
        if conv.closed || !conv.automation_enabled {
            return Ok(None);
        }
        // Keyed by log position so a resumed run draws what the original
        // would have.
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.seed);
        rng.set_stream(self.engine.next_seq());
        let mut plan = TickPlan {
            conversation_id: conv_id,
            user_message_id: conv.latest_user_message().map(|m| m.id),
            context: None,
            calls: Vec::new(),
            deadline: self.settings.bot_deadline,
        };
        let Some(ctx) = BotContext::from_conversation(conv) else {
            return Ok(Some(plan));
        };
        let answered = conv
            .messages_in_turn(conv.turn_index)
            .any(|m| !m.is_user() && m.state == MessageState::Accepted);
        if answered {
            return Ok(Some(plan));
        }
        let available = self.available_bots();
        if available.is_empty() {
            return Ok(Some(plan));
        }
        let chosen: Vec<String> = match conv.phase.bot_policy {
            BotPolicy::RandomOne => {
                vec![available[rng.random_range(0..available.len())].clone()]
            }
            BotPolicy::TopPlusRandom { n_random } => {
                let ranked: Vec<_> = self
                    .selector
                    .rank_text(&ctx.user_message, &self.table)
                    .unwrap_or_default()
                    .into_iter()
                    .filter(|r| available.contains(&r.bot_id))
                    .collect();
                select_bots(&ranked, &mut rng, n_random)
            }
        };
        for bot_id in chosen {
            if let Some(bot) = self.registry.get(&bot_id) {
                let seed = rng.random::<u64>();
                plan.calls.push((bot_id, Arc::clone(bot), seed));
            }
        }
        plan.context = Some(Arc::new(ctx));
        Ok(Some(plan))
    }

    /// Proposes the non-declined replies, then lets the vote bot cast at
    /// most one upvote.
    pub fn finish_tick(
        &mut self,
        plan: &TickPlan,
        replies: Vec<BotReply>,
        now: Timestamp,
    ) -> Result<TickReport, OrchestratorError> {
        let conv_id = plan.conversation_id;
        let mut report = TickReport {
            conversation_id: conv_id,
            invoked: plan.calls.iter().map(|(id, _, _)| id.clone()).collect(),
            actions: Vec::new(),
        };
        if self.engine.conversation(conv_id)?.closed {
            return Ok(report);
        }
        for ((bot_id, _, _), reply) in plan.calls.iter().zip(replies) {
            let conv = self.engine.conversation(conv_id)?;
            if conv.closed {
                break;
            }
            let decline = match reply {
                BotReply::Declined(reason) => Some(reason.label()),
                BotReply::Text { .. }
                    if conv.latest_user_message().map(|m| m.id) != plan.user_message_id =>
                {
                    Some("stale".to_string())
                }
                BotReply::Text { ref text, .. }
                    if conv
                        .messages_in_turn(conv.turn_index)
                        .any(|m| m.state == MessageState::Proposed && m.text == *text) =>
                {
                    Some("duplicate".to_string())
                }
                BotReply::Text { text, .. } => {
                    let p = self.engine.propose_response(
                        conv_id,
                        bot_id,
                        Role::Bot,
                        &text,
                        Some(bot_id),
                        now,
                    )?;
                    report.actions.push(TickAction::Proposed {
                        bot_id: bot_id.clone(),
                        message_id: p.message_id,
                        accepted: p.outcome == VoteOutcome::Accepted,
                    });
                    None
                }
            };
            if let Some(reason) = decline {
                debug!(%conv_id, bot = %bot_id, %reason, "bot declined");
                self.engine
                    .record_bot_declined(conv_id, bot_id, &reason, now)?;
                report.actions.push(TickAction::Declined {
                    bot_id: bot_id.clone(),
                    reason,
                });
            }
        }
        if let Some(action) = self.vote_bot_step(conv_id, now)? {
            report.actions.push(action);
        }
        self.sync(now)?;
        Ok(report)
    }

    fn vote_bot_step(
        &mut self,
        conv_id: ConversationId,
        now: Timestamp,
    ) -> Result<Option<TickAction>, OrchestratorError> {
        let conv = self.engine.conversation(conv_id)?;
        if conv.closed || !conv.phase.vote_bot_enabled {
            return Ok(None);
        }
        let Some(model) = &self.voter else {
            return Ok(None);
        };
        let threshold = conv.phase.auto_vote_threshold;
        let mut best: Option<(MessageId, f64)> = None;
        for msg in conv.proposed() {
            if let VoteDecision::Upvote { confidence } =
                maybe_vote_at(model, msg, conv, &self.table, threshold)
            {
                if best.is_none_or(|(_, c)| confidence > c) {
                    best = Some((msg.id, confidence));
                }
            }
        }
        let Some((message_id, confidence)) = best else {
            return Ok(None);
        };
        let outcome = self.engine.cast_vote(
            conv_id,
            message_id,
            VOTE_BOT_ID,
            VoterKind::Machine,
            Polarity::Up,
            now,
        )?;
        Ok(Some(TickAction::MachineVote {
            message_id,
            confidence,
            accepted: outcome == VoteOutcome::Accepted,
        }))
    }

    /// One full tick: choose, invoke, propose, auto-vote.
    pub fn run_tick(
        &mut self,
        conv_id: ConversationId,
        now: Timestamp,
    ) -> Result<TickReport, OrchestratorError> {
        let Some(plan) = self.prepare_tick(conv_id)? else {
            return Ok(TickReport {
                conversation_id: conv_id,
                ..TickReport::default()
            });
        };
        let replies = plan.execute();
        self.finish_tick(&plan, replies, now)
    }

    /// Open conversations with automation enabled.
    pub fn automated_open(&self) -> Vec<ConversationId> {
        self.engine
            .conversations()
            .filter(|c| !c.closed && c.automation_enabled)
            .map(|c| c.id)
            .collect()
    }

    pub fn save_log(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        crate::event::write_jsonl(path, self.engine.events())
    }
}
