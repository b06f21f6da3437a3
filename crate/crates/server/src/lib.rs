//! Network service around the orchestrator: a JSON-over-WebSocket wire
//! protocol for live participants, equivalent HTTP endpoints, and a
//! background scheduler for bot ticks and idle sweeps.

pub mod protocol;
mod routes;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tracing::info;

use hivechat_core::orchestrator::{Orchestrator, OrchestratorConfig};
use hivechat_core::time::{Clock, SystemClock};

pub use protocol::{ClientCommand, CommandFrame, Participant, ServerFrame};
pub use routes::router;
pub use state::{AppState, ServiceError};

/// How often the scheduler checks for due ticks.
pub const TICK_POLL: Duration = Duration::from_millis(250);

/// A service bound to a local address.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub state: AppState,
    server: JoinHandle<()>,
    scheduler: Option<JoinHandle<()>>,
}

impl RunningServer {
    /// Stops serving. Everything acknowledged is already in the log.
    pub fn shutdown(self) {
        self.server.abort();
        if let Some(s) = self.scheduler {
            s.abort();
        }
    }
}

/// Builds the orchestrator from `cfg`, replaying its log, and starts
/// serving on `cfg.listen`. With `scheduler` off, ticks only run through
/// [`AppState::tick_due`].
pub async fn start(
    cfg: &OrchestratorConfig,
    clock: Arc<dyn Clock>,
    scheduler: bool,
) -> anyhow::Result<RunningServer> {
    let now = clock.now();
    let orch = Orchestrator::from_config(cfg, now).context("building orchestrator")?;
    let state = AppState::new(orch, clock);
    let listener = TcpListener::bind(&cfg.listen)
        .await
        .with_context(|| format!("binding {}", cfg.listen))?;
    let addr = listener.local_addr()?;
    let app = router(state.clone());
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    let scheduler = scheduler.then(|| {
        let sweep = Duration::from_secs(cfg.sweep_interval_secs.max(1));
        tokio::spawn(state.clone().run_scheduler(TICK_POLL, sweep))
    });
    info!(%addr, "listening");
    Ok(RunningServer {
        addr,
        state,
        server,
        scheduler,
    })
}

/// Serves until interrupted.
pub async fn serve(cfg: OrchestratorConfig) -> anyhow::Result<()> {
    let running = start(&cfg, Arc::new(SystemClock), true).await?;
    tokio::signal::ctrl_c().await?;
    info!("shutting down");
    running.shutdown();
    Ok(())
}
