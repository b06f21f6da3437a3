use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use tokio::sync::broadcast;
use tracing::{debug, warn};

use hivechat_core::conversation::{ConversationId, Polarity};
use hivechat_core::event::{CloseReason, EventKind};
use hivechat_core::orchestrator::{Orchestrator, OrchestratorError, TickPlan, TickReport};
use hivechat_core::time::{Clock, Timestamp};

use crate::protocol::{ClientCommand, Participant, ServerFrame};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    BadRequest(String),
}

pub(crate) struct Inner {
    pub(crate) orch: Orchestrator,
    published: usize,
    totals: BTreeMap<String, u64>,
    last_tick: HashMap<ConversationId, Timestamp>,
}

/// Shared handle to the orchestrator plus the outgoing frame bus.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    frames: broadcast::Sender<Arc<ServerFrame>>,
    clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(orch: Orchestrator, clock: Arc<dyn Clock>) -> Self {
        let (frames, _) = broadcast::channel(1024);
        let mut inner = Inner {
            orch,
            published: 0,
            totals: BTreeMap::new(),
            last_tick: HashMap::new(),
        };
        // Historical events only seed the running point totals.
        Self::drain(&mut inner, None);
        Self {
            inner: Arc::new(Mutex::new(inner)),
            frames,
            clock,
        }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<ServerFrame>> {
        self.frames.subscribe()
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` against the orchestrator, then broadcasts what it logged.
    /// Events are already durable when `f` returns.
    pub fn with<T>(
        &self,
        f: impl FnOnce(&mut Orchestrator) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let mut inner = self.lock();
        let out = f(&mut inner.orch);
        Self::drain(&mut inner, Some(&self.frames));
        out
    }

    pub fn read<T>(&self, f: impl FnOnce(&Orchestrator) -> T) -> T {
        f(&self.lock().orch)
    }

    fn drain(inner: &mut Inner, bus: Option<&broadcast::Sender<Arc<ServerFrame>>>) {
        let events = inner.orch.engine().events();
        for event in &events[inner.published..] {
            if let EventKind::RewardGranted {
                worker_id, points, ..
            } = &event.kind
            {
                *inner.totals.entry(worker_id.clone()).or_default() += points;
            }
            let totals = &inner.totals;
            if let Some(bus) = bus {
                if let Some(frame) =
                    ServerFrame::from_event(event, |w| totals.get(w).copied().unwrap_or(0))
                {
                    let _ = bus.send(Arc::new(frame));
                }
            }
        }
        inner.published = events.len();
    }

    /// Applies one participant command. Returns the seq of the last event
    /// it wrote.
    pub fn apply(
        &self,
        conv: ConversationId,
        who: &Participant,
        command: &ClientCommand,
    ) -> Result<Option<u64>, ServiceError> {
        let now = self.now();
        self.with(|orch| {
            let before = orch.engine().next_seq();
            let owner = orch.conversation(conv)?.user_id.clone();
            match (who, command) {
                (Participant::User(u), _) if *u != owner => {
                    return Err(ServiceError::Forbidden(format!(
                        "{u} does not own conversation {}",
                        conv.0
                    )))
                }
                (Participant::User(_), ClientCommand::UserMessage { text }) => {
                    orch.post_user_message(conv, text, now)?;
                }
                (Participant::User(_), ClientCommand::Leave) => {
                    orch.close_conversation(conv, CloseReason::Explicit, now)?;
                }
                (Participant::User(_), other) => {
                    return Err(ServiceError::Forbidden(format!(
                        "users cannot {}",
                        other.name()
                    )))
                }
                (Participant::Worker(_), ClientCommand::UserMessage { .. }) => {
                    return Err(ServiceError::Forbidden(
                        "workers cannot post user messages".into(),
                    ))
                }
                (Participant::Worker(w), ClientCommand::Propose { text }) => {
                    orch.propose(conv, w, text, now)?;
                }
                (Participant::Worker(w), ClientCommand::Upvote { message_id }) => {
                    orch.vote(conv, *message_id, w, Polarity::Up, now)?;
                }
                (Participant::Worker(w), ClientCommand::Downvote { message_id }) => {
                    orch.vote(conv, *message_id, w, Polarity::Down, now)?;
                }
                (Participant::Worker(w), ClientCommand::AddFact { text }) => {
                    orch.add_fact(conv, w, text, now)?;
                }
                (Participant::Worker(w), ClientCommand::Leave) => {
                    orch.leave_worker(conv, w, now)?;
                }
            }
            let after = orch.engine().next_seq();
            Ok((after > before).then(|| after - 1))
        })
    }

    /// Runs every automated conversation whose tick period has elapsed.
    /// Bots are invoked without holding the lock.
    pub async fn tick_due(&self) -> Vec<TickReport> {
        let now = self.now();
        let plans: Vec<TickPlan> = {
            let mut inner = self.lock();
            let due: Vec<ConversationId> = inner
                .orch
                .automated_open()
                .into_iter()
                .filter(|id| {
                    let Ok(conv) = inner.orch.conversation(*id) else {
                        return false;
                    };
                    let period = conv.phase.chatbot_tick_seconds * 1000;
                    let last = inner.last_tick.get(id).copied().unwrap_or(conv.opened_at);
                    now.since(last) >= period
                })
                .collect();
            let mut plans = Vec::new();
            for id in due {
                inner.last_tick.insert(id, now);
                match inner.orch.prepare_tick(id) {
                    Ok(Some(plan)) => plans.push(plan),
                    Ok(None) => {}
                    Err(e) => warn!(conversation = id.0, error = %e, "tick preparation failed"),
                }
            }
            plans
        };
        let mut handles = Vec::new();
        for plan in plans {
            handles.push(tokio::task::spawn_blocking(move || {
                let replies = plan.execute();
                (plan, replies)
            }));
        }
        let mut reports = Vec::new();
        for h in handles {
            let Ok((plan, replies)) = h.await else {
                continue;
            };
            let finished_at = self.now();
            match self.with(|o| Ok(o.finish_tick(&plan, replies, finished_at)?)) {
                Ok(report) => {
                    debug!(
                        conversation = report.conversation_id.0,
                        actions = report.actions.len(),
                        "tick"
                    );
                    reports.push(report);
                }
                Err(e) => warn!(error = %e, "tick failed"),
            }
        }
        reports
    }

    pub fn sweep_idle(&self) -> Vec<ConversationId> {
        let now = self.now();
        self.with(|o| Ok(o.close_idle(now)?)).unwrap_or_else(|e| {
            warn!(error = %e, "idle sweep failed");
            Vec::new()
        })
    }

    /// Background loop driving ticks and idle sweeps until the task is
    /// dropped.
    pub async fn run_scheduler(self, poll: Duration, sweep_every: Duration) {
        let mut poll_timer = tokio::time::interval(poll);
        let mut sweep_timer = tokio::time::interval(sweep_every);
        loop {
            tokio::select! {
                _ = poll_timer.tick() => { self.tick_due().await; }
                _ = sweep_timer.tick() => { self.sweep_idle(); }
            }
        }
    }
}
