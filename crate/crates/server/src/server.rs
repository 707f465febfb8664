use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tracing::{info, warn};

use vrgcs_core::scan::WorldError;
use vrgcs_core::sim::{ScriptCursor, ScriptEvent, Simulation};
use vrgcs_core::telemetry::LatencyLog;
use vrgcs_core::{ServerConfig, WorldModel};

use crate::clock::Clock;
use crate::session::{run_session, SessionContext};
use crate::sim_loop::{ScriptOutcome, ScriptState, SimInput, SimLoop};
use crate::stats::{ServerStats, StatsSnapshot};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid config: {0}")]
    Config(#[from] vrgcs_core::ConfigError),
    #[error("loading world: {0}")]
    World(#[from] WorldError),
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("simulation thread: {0}")]
    Thread(std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Commands replayed on the simulation clock.
    pub script: Option<Vec<ScriptEvent>>,
    /// Run the simulation unthrottled until the script finishes.
    pub fast: bool,
    /// Simulated seconds after which an unfinished script is reported.
    pub script_max_time: Option<f64>,
}

/// Loads the configured world, or the built-in wall scene.
pub fn load_world(config: &ServerConfig) -> Result<WorldModel, WorldError> {
    match &config.world {
        Some(path) => WorldModel::load(path),
        None => Ok(WorldModel::wall()),
    }
}

/// A running server.
pub struct ServerHandle {
    addr: SocketAddr,
    stats: Arc<ServerStats>,
    log: Arc<Mutex<LatencyLog>>,
    clock: Clock,
    sim_tx: Sender<SimInput>,
    sim_thread: Option<JoinHandle<()>>,
    accept_task: tokio::task::JoinHandle<()>,
    script_done: Option<oneshot::Receiver<ScriptOutcome>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    /// Copy of the latency log so far.
    pub fn latency_log(&self) -> LatencyLog {
        self.log.lock().expect("latency log poisoned").clone()
    }

    /// Waits for the scripted run to finish. `None` without a script or if
    /// the simulation stopped first.
    pub async fn script_outcome(&mut self) -> Option<ScriptOutcome> {
        self.script_done.take()?.await.ok()
    }

    /// Stops accepting, ends the simulation and drops every session.
    pub async fn shutdown(mut self) -> LatencyLog {
        self.accept_task.abort();
        let _ = self.sim_tx.send(SimInput::Shutdown);
        if let Some(t) = self.sim_thread.take() {
            let _ = tokio::task::spawn_blocking(move || t.join()).await;
        }
        // Let session tasks flush their close frames.
        tokio::time::sleep(Duration::from_millis(20)).await;
        self.latency_log()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.accept_task.abort();
        let _ = self.sim_tx.send(SimInput::Shutdown);
    }
}

/// Binds the listener and starts the simulation thread.
pub async fn start_server(
    config: ServerConfig,
    world: WorldModel,
    options: ServerOptions,
) -> Result<ServerHandle, ServerError> {
    config.validate()?;
    world.validate()?;
    let bind = format!("{}:{}", config.listen_addr, config.port);
    let listener = TcpListener::bind(&bind)
        .await
        .map_err(|source| ServerError::Bind {
            addr: bind.clone(),
            source,
        })?;
    let addr = listener
        .local_addr()
        .map_err(|source| ServerError::Bind { addr: bind, source })?;

    let clock = Clock::start();
    let stats = Arc::new(ServerStats::default());
    let log = Arc::new(Mutex::new(LatencyLog::new()));
    let (sim_tx, sim_rx) = std::sync::mpsc::channel();

    let (script, script_done) = match options.script {
        Some(events) => {
            let (tx, rx) = oneshot::channel();
            let state = ScriptState {
                cursor: ScriptCursor::new(events),
                max_time: options.script_max_time.unwrap_or(600.0),
                done: Some(tx),
            };
            (Some(state), Some(rx))
        }
        None => (None, None),
    };

    let sim = Simulation::new(config.sim_config(), world.clone());
    let sim_loop = SimLoop::new(
        sim,
        world.name.clone(),
        config.viewer_offset_m,
        config.pose_rate,
        options.fast,
        clock,
        stats.clone(),
        log.clone(),
        script,
    );
    let sim_thread = std::thread::Builder::new()
        .name("simulation".into())
        .spawn(move || sim_loop.run(sim_rx))
        .map_err(ServerError::Thread)?;

    let ctx = SessionContext {
        sim_tx: sim_tx.clone(),
        clock,
        stats: stats.clone(),
        log: log.clone(),
        probe_interval: Duration::from_secs_f64(1.0 / config.probe_rate),
        next_session: Arc::new(AtomicU64::new(1)),
        next_probe: Arc::new(AtomicU64::new(1)),
    };
    let accept_task = tokio::spawn(async move {
        loop {
            match listener.accept().await {
                Ok((stream, _)) => {
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(run_session(stream, ctx.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    });
    info!(%addr, world = %world.name, "listening");

    Ok(ServerHandle {
        addr,
        stats,
        log,
        clock,
        sim_tx,
        sim_thread: Some(sim_thread),
        accept_task,
        script_done,
    })
}

/// Runs until Ctrl-C.
pub async fn run_server(config: ServerConfig) -> Result<LatencyLog, ServerError> {
    let world = load_world(&config)?;
    let handle = start_server(config, world, ServerOptions::default()).await?;
    let _ = tokio::signal::ctrl_c().await;
    info!("shutting down");
    Ok(handle.shutdown().await)
}
