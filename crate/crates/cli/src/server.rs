//! Teleoperation server: a fixed-rate physics ticker that owns the session,
//! and websocket clients that send commands to it and receive state
//! snapshots.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

use twinsim_core::demo::{record, save_demo, DemoError, DemoSource};
use twinsim_core::error::{SceneError, TwinError};
use twinsim_core::math::clamp_to_plane;
use twinsim_core::scene::{build_scene, world_from_snapshot, SceneConfig};
use twinsim_core::twin::{CoupledSystem, Mode, ProxyWorld};
use twinsim_core::world::WorldState;
use twinsim_eval::{load_json, save_json, CouplingConfig, EvalError, FailureState, AUGMENTATION_TAG};

use crate::wire::{ClientMessage, ObjectSnapshot, RecordCmd, RobotSnapshot, ServerMessage, SessionMode, Snapshot};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid server config: {0}")]
    Config(String),
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub scene: SceneConfig,
    pub mode: Mode,
    pub coupling: CouplingConfig,
    /// Where recorded demos are written.
    pub demos_dir: PathBuf,
    /// Queue of failure states; rewritten as re-demonstrations complete.
    pub failures_path: Option<PathBuf>,
    /// State broadcast rate (Hz); at most the physics rate.
    pub stream_hz: f64,
    /// Stop after this many demos have been saved.
    pub stop_after: Option<usize>,
    pub seed: u64,
}

impl ServerConfig {
    pub fn new(scene: SceneConfig, mode: Mode, demos_dir: PathBuf) -> Self {
        Self {
            scene,
            mode,
            coupling: CouplingConfig::default(),
            demos_dir,
            failures_path: None,
            stream_hz: 20.0,
            stop_after: None,
            seed: 0,
        }
    }

    fn ticks_per_frame(&self) -> Result<u64, ServerError> {
        let physics_hz = 1.0 / self.scene.dt;
        if !(self.stream_hz > 0.0 && self.stream_hz <= physics_hz) {
            return Err(ServerError::Config(format!("stream rate {} Hz", self.stream_hz)));
        }
        Ok((physics_hz / self.stream_hz).round() as u64)
    }
}

/// World, recording and failure queue. Only the ticker touches it.
pub struct Session {
    config: ServerConfig,
    system: CoupledSystem,
    target: Vec<f64>,
    recording: Option<Vec<WorldState>>,
    failures: Vec<FailureState>,
    active_failure: Option<usize>,
    saved: usize,
    clients: Arc<AtomicUsize>,
}

impl Session {
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        config.ticks_per_frame()?;
        let failures = match &config.failures_path {
            Some(p) if p.exists() => load_json(p)?,
            _ => Vec::new(),
        };
        let world = build_scene(&config.scene, config.seed)?;
        let target = world.robot.q.clone();
        let system = couple(world, &config)?;
        Ok(Self {
            config,
            system,
            target,
            recording: None,
            failures,
            active_failure: None,
            saved: 0,
            clients: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn saved(&self) -> usize {
        self.saved
    }

    pub fn failures(&self) -> &[FailureState] {
        &self.failures
    }

    pub fn system(&self) -> &CoupledSystem {
        &self.system
    }

    pub fn mode(&self) -> SessionMode {
        match (self.active_failure, &self.recording) {
            (Some(_), _) => SessionMode::ReplayingFailure,
            (None, Some(_)) => SessionMode::Collecting,
            (None, None) => SessionMode::Idle,
        }
    }

    /// Applies one client message and returns the reply for that client.
    pub fn handle(&mut self, msg: ClientMessage) -> ServerMessage {
        match self.try_handle(msg) {
            Ok(reply) => reply,
            Err(e) => ServerMessage::error(e.to_string()),
        }
    }

    fn try_handle(&mut self, msg: ClientMessage) -> Result<ServerMessage, ServerError> {
        match msg {
            ClientMessage::Teleop { target } => {
                if !target.iter().all(|v| v.is_finite()) {
                    return Err(ServerError::Config("non-finite teleop target".into()));
                }
                let clamped = clamp_to_plane(target, &self.config.scene.workspace());
                self.target = clamped.to_vec();
                Ok(ServerMessage::TeleopAck { target: clamped })
            }
            ClientMessage::Record { cmd } => self.record(cmd),
            ClientMessage::LoadFailure { index } => {
                if self.recording.is_some() {
                    return Err(ServerError::Config("stop the recording before loading a failure".into()));
                }
                let f = self
                    .failures
                    .get(index)
                    .ok_or_else(|| ServerError::Config(format!("no failure {index} (queue has {})", self.failures.len())))?;
                let world = world_from_snapshot(&self.config.scene, &f.terminal.q, &f.terminal.object_poses())?;
                self.target = world.robot.q.clone();
                self.system = couple(world, &self.config)?;
                self.active_failure = Some(index);
                Ok(ServerMessage::FailureLoaded {
                    index,
                    remaining: self.failures.len(),
                })
            }
        }
    }

    fn record(&mut self, cmd: RecordCmd) -> Result<ServerMessage, ServerError> {
        match cmd {
            RecordCmd::Start => {
                if self.recording.is_some() {
                    return Err(ServerError::Config("already recording".into()));
                }
                self.recording = Some(vec![self.system.twin.clone()]);
                Ok(ServerMessage::RecordAck { cmd })
            }
            RecordCmd::Discard => {
                if self.recording.take().is_none() {
                    return Err(ServerError::Config("not recording".into()));
                }
                self.active_failure = None;
                Ok(ServerMessage::RecordAck { cmd })
            }
            RecordCmd::Stop => {
                let states = self.recording.as_ref().ok_or_else(|| ServerError::Config("not recording".into()))?;
                if states.len() < 2 {
                    return Err(ServerError::Config("recording is too short".into()));
                }
                let mode = match self.config.mode {
                    Mode::Online => "online",
                    Mode::Offline => "offline",
                };
                let (tag, stem) = match self.active_failure {
                    Some(_) => (format!("{mode},{AUGMENTATION_TAG}"), format!("teleop-{mode}-aug")),
                    None => (mode.to_string(), format!("teleop-{mode}")),
                };
                let mut demo = record(&self.config.scene, DemoSource::Teleop, states)?;
                demo.header.tag = Some(tag.clone());
                std::fs::create_dir_all(&self.config.demos_dir)?;
                let path = next_free(&self.config.demos_dir, &stem);
                save_demo(&demo, &path)?;
                if let Some(i) = self.active_failure.take() {
                    self.failures.remove(i);
                    if let Some(p) = &self.config.failures_path {
                        save_json(&self.failures, p)?;
                    }
                }
                self.recording = None;
                self.saved += 1;
                tracing::info!(path = %path.display(), frames = demo.frames.len(), "saved demo");
                Ok(ServerMessage::Saved {
                    path: path.display().to_string(),
                    frames: demo.frames.len(),
                    tag,
                })
            }
        }
    }

    /// Advances the world one physics step toward the teleop target.
    pub fn tick(&mut self) -> Result<(), ServerError> {
        let seed = self.config.seed;
        self.system.coupled_step(&self.target, seed)?;
        if let Some(states) = &mut self.recording {
            states.push(self.system.twin.clone());
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<Snapshot, ServerError> {
        let twin = &self.system.twin;
        let sync_error = match self.system.proxy() {
            Some(_) => Some(self.system.sync_error()?),
            None => None,
        };
        Ok(Snapshot {
            t: twin.time,
            mode: self.mode(),
            robot: RobotSnapshot {
                q: twin.robot.q.clone(),
                qd: twin.robot.qdot.clone(),
                q_desired: twin.robot.q_desired.clone(),
            },
            objects: twin
                .objects()
                .map(|b| {
                    let p = b.pose.position;
                    let o = b.pose.orientation.coords;
                    ObjectSnapshot {
                        id: b.id,
                        p: [p.x, p.y, p.z],
                        quat: [o.x, o.y, o.z, o.w],
                    }
                })
                .collect(),
            recording: self.recording.is_some(),
            sync_error,
            progress: None,
            failures: self.failures.len(),
            clients: self.clients.load(Ordering::Relaxed),
        })
    }
}

fn couple(world: WorldState, config: &ServerConfig) -> Result<CoupledSystem, ServerError> {
    Ok(match config.mode {
        Mode::Offline => CoupledSystem::offline(world),
        Mode::Online => {
            let c = config.coupling;
            let proxy = ProxyWorld::from_twin(&world, c.perturbation, c.noise);
            CoupledSystem::online(world, proxy, c.gains)?
        }
    })
}

fn next_free(dir: &Path, stem: &str) -> PathBuf {
    (0..)
        .map(|n| dir.join(format!("{stem}-{n:04}.demo")))
        .find(|p| !p.exists())
        .expect("some index is free")
}

type Command = (ClientMessage, mpsc::UnboundedSender<String>);

#[derive(Clone)]
struct AppState {
    commands: mpsc::UnboundedSender<Command>,
    states: broadcast::Sender<String>,
    clients: Arc<AtomicUsize>,
}

/// Serves `/ws` on `listener` until `stop_after` demos have been saved (or
/// forever). Returns the number of demos saved.
pub async fn serve(listener: TcpListener, config: ServerConfig) -> Result<usize, ServerError> {
    let every = config.ticks_per_frame()?;
    let dt = config.scene.dt;
    let stop_after = config.stop_after;
    let mut session = Session::new(config)?;
    let (commands, mut rx) = mpsc::unbounded_channel::<Command>();
    // Small buffer: a client that falls behind skips frames instead of
    // queueing them.
    let (states, _) = broadcast::channel::<String>(4);
    let app = AppState {
        commands,
        states: states.clone(),
        clients: session.clients.clone(),
    };
    let router = Router::new()
        .route("/ws", get(upgrade))
        .route("/", get(|| async { "twinsim teleop server; connect to /ws" }))
        .with_state(app);

    let ticker = async move {
        let mut interval = tokio::time::interval(Duration::from_secs_f64(dt));
        let mut tick: u64 = 0;
        loop {
            interval.tick().await;
            while let Ok((msg, reply)) = rx.try_recv() {
                let _ = reply.send(session.handle(msg).to_json());
            }
            if stop_after.is_some_and(|n| session.saved() >= n) {
                return Ok::<usize, ServerError>(session.saved());
            }
            session.tick()?;
            tick += 1;
            if tick % every == 0 {
                let _ = states.send(ServerMessage::State(session.snapshot()?).to_json());
            }
        }
    };

    tracing::info!(addr = ?listener.local_addr()?, "serving");
    tokio::select! {
        r = axum::serve(listener, router) => {
            r?;
            Ok(0)
        }
        r = ticker => r,
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(app): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, app))
}

async fn client(socket: WebSocket, app: AppState) {
    app.clients.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let mut states = app.states.subscribe();
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<String>();

    let writer = async move {
        loop {
            let text = tokio::select! {
                s = states.recv() => match s {
                    Ok(s) => s,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                Some(r) = replies.recv() => r,
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    };
    let commands = app.commands.clone();
    let reader = async move {
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Close(_) => break,
                Message::Binary(_) => {
                    let _ = reply_tx.send(ServerMessage::error("binary messages are not supported").to_json());
                    continue;
                }
                _ => continue,
            };
            match serde_json::from_str::<ClientMessage>(&text) {
                Ok(m) => {
                    if commands.send((m, reply_tx.clone())).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = reply_tx.send(ServerMessage::error(format!("malformed message: {e}")).to_json());
                }
            }
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    app.clients.fetch_sub(1, Ordering::Relaxed);
}
