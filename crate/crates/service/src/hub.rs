//! Session registry and per-session loop tasks.
//!
//! Each session runs its planner loop in its own task and owns all of its
//! state; clients talk to it through channels only. Commands go in through
//! one queue (the task is the single writer of the target buffer). State and
//! plan previews come out through latest-wins slots, metrics and control
//! messages (acks, events, heartbeats) through lossless queues.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::{Instant, MissedTickBehavior};

use teleop_core::config::{ParamSet, RobotConfig};
use teleop_core::runner::LOOP_PERIOD;

use crate::protocol::{Envelope, Level, NO_SESSION};
use crate::session::SessionCore;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub robot: RobotConfig,
    /// Parameter set of new sessions.
    pub default_params: ParamSet,
    /// Directory that may override the built-in parameter sets.
    pub params_dir: Option<PathBuf>,
    /// Maximum number of live sessions.
    pub capacity: usize,
    pub loop_period: Duration,
    pub heartbeat: Duration,
    /// Inbound silence after which a connection is closed, and detached time
    /// after which a session is torn down.
    pub idle_timeout: Duration,
    /// Detached time after which the loop stops running cycles.
    pub pause_grace: Duration,
}

impl ServiceConfig {
    pub fn new(robot: RobotConfig, default_params: ParamSet) -> Self {
        Self {
            robot,
            default_params,
            params_dir: None,
            capacity: 8,
            loop_period: Duration::from_secs_f64(LOOP_PERIOD),
            heartbeat: Duration::from_secs(1),
            idle_timeout: Duration::from_secs(30),
            pause_grace: Duration::from_secs(5),
        }
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self::new(RobotConfig::builtin(), ParamSet::p2())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Refusal {
    #[error("session capacity of {0} reached")]
    Capacity(usize),
    #[error("session {0} has ended; open a new session")]
    Stale(u64),
    #[error("session {0} does not exist; open a new session")]
    Unknown(u64),
    #[error("session {0} already has a client")]
    Busy(u64),
    #[error("session could not start: {0}")]
    Start(String),
}

impl Refusal {
    pub fn to_envelope(&self) -> Envelope {
        let session = match self {
            Refusal::Stale(id) | Refusal::Unknown(id) | Refusal::Busy(id) => *id,
            Refusal::Capacity(_) | Refusal::Start(_) => NO_SESSION,
        };
        Envelope::refused(session, self.to_string())
    }
}

/// Commands handled by a session task.
#[derive(Debug)]
pub enum Command {
    /// Raw inbound text frame.
    Text(String),
    /// Produces a snapshot for a (re)attaching client.
    Snapshot(oneshot::Sender<Envelope>),
}

/// Receiving ends held by the attached client.
#[derive(Debug)]
pub struct Outputs {
    pub state: watch::Receiver<Option<Envelope>>,
    pub preview: watch::Receiver<Option<Envelope>>,
    pub metrics: mpsc::UnboundedReceiver<Envelope>,
    pub control: mpsc::UnboundedReceiver<Envelope>,
}

struct Entry {
    commands: mpsc::UnboundedSender<Command>,
    /// Present while no client is attached.
    outputs: Option<Outputs>,
    attached: watch::Sender<bool>,
}

#[derive(Default)]
struct Registry {
    next_id: u64,
    live: HashMap<u64, Entry>,
    ended: HashSet<u64>,
}

/// Handle on the set of sessions; cheap to clone.
#[derive(Clone)]
pub struct Hub {
    config: Arc<ServiceConfig>,
    registry: Arc<Mutex<Registry>>,
}

/// A client's connection to one session. Dropping it detaches the client;
/// the session keeps running for the grace period and ends after the idle
/// timeout unless a client resumes it.
pub struct Attachment {
    pub id: u64,
    pub snapshot: Envelope,
    pub outputs: Option<Outputs>,
    commands: mpsc::UnboundedSender<Command>,
    hub: Hub,
}

impl Attachment {
    /// Queues a raw inbound frame for the session loop.
    pub fn send_text(&self, text: impl Into<String>) -> bool {
        self.commands.send(Command::Text(text.into())).is_ok()
    }

    pub fn outputs(&mut self) -> &mut Outputs {
        self.outputs.as_mut().expect("outputs are held until drop")
    }
}

impl std::fmt::Debug for Attachment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Attachment")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

impl Drop for Attachment {
    fn drop(&mut self) {
        if let Some(outputs) = self.outputs.take() {
            self.hub.detach(self.id, outputs);
        }
    }
}

impl Hub {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            registry: Arc::new(Mutex::new(Registry::default())),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn live_sessions(&self) -> usize {
        self.registry.lock().expect("registry lock").live.len()
    }

    /// Opens a new session with the default parameter set. Must be called
    /// from within a tokio runtime.
    pub async fn open(&self) -> Result<Attachment, Refusal> {
        let (id, commands, outputs) = {
            let mut reg = self.registry.lock().expect("registry lock");
            if reg.live.len() >= self.config.capacity {
                return Err(Refusal::Capacity(self.config.capacity));
            }
            reg.next_id += 1;
            let id = reg.next_id;
            let core = SessionCore::new(
                id,
                self.config.robot.clone(),
                self.config.default_params.clone(),
                self.config.params_dir.clone(),
            )
            .map_err(|e| Refusal::Start(e.to_string()))?;
            let (commands, outputs, attached) = self.spawn(core);
            reg.live.insert(
                id,
                Entry {
                    commands: commands.clone(),
                    outputs: None,
                    attached,
                },
            );
            (id, commands, outputs)
        };
        self.attach(id, commands, outputs).await
    }

    /// Re-attaches to a live, detached session.
    pub async fn resume(&self, id: u64) -> Result<Attachment, Refusal> {
        let (commands, outputs) = {
            let mut reg = self.registry.lock().expect("registry lock");
            if reg.ended.contains(&id) {
                return Err(Refusal::Stale(id));
            }
            let Some(entry) = reg.live.get_mut(&id) else {
                return Err(Refusal::Unknown(id));
            };
            let Some(outputs) = entry.outputs.take() else {
                return Err(Refusal::Busy(id));
            };
            entry.attached.send_replace(true);
            (entry.commands.clone(), outputs)
        };
        self.attach(id, commands, outputs).await
    }

    async fn attach(
        &self,
        id: u64,
        commands: mpsc::UnboundedSender<Command>,
        outputs: Outputs,
    ) -> Result<Attachment, Refusal> {
        let (tx, rx) = oneshot::channel();
        let mut attachment = Attachment {
            id,
            snapshot: Envelope::refused(id, ""),
            outputs: Some(outputs),
            commands: commands.clone(),
            hub: self.clone(),
        };
        if commands.send(Command::Snapshot(tx)).is_err() {
            return Err(Refusal::Stale(id));
        }
        attachment.snapshot = rx.await.map_err(|_| Refusal::Stale(id))?;
        Ok(attachment)
    }

    fn detach(&self, id: u64, outputs: Outputs) {
        let mut reg = self.registry.lock().expect("registry lock");
        if let Some(entry) = reg.live.get_mut(&id) {
            entry.outputs = Some(outputs);
            entry.attached.send_replace(false);
        }
    }

    fn end(&self, id: u64) {
        let mut reg = self.registry.lock().expect("registry lock");
        reg.live.remove(&id);
        reg.ended.insert(id);
    }

    fn spawn(
        &self,
        core: SessionCore,
    ) -> (mpsc::UnboundedSender<Command>, Outputs, watch::Sender<bool>) {
        let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
        let (state_tx, state_rx) = watch::channel(None);
        let (preview_tx, preview_rx) = watch::channel(None);
        let (metrics_tx, metrics_rx) = mpsc::unbounded_channel();
        let (control_tx, control_rx) = mpsc::unbounded_channel();
        let (attached_tx, attached_rx) = watch::channel(true);
        let task = SessionTask {
            core,
            hub: self.clone(),
            commands: cmd_rx,
            attached: attached_rx,
            state: state_tx,
            preview: preview_tx,
            metrics: metrics_tx,
            control: control_tx,
        };
        tokio::spawn(task.run());
        let outputs = Outputs {
            state: state_rx,
            preview: preview_rx,
            metrics: metrics_rx,
            control: control_rx,
        };
        (cmd_tx, outputs, attached_tx)
    }
}

struct SessionTask {
    core: SessionCore,
    hub: Hub,
    commands: mpsc::UnboundedReceiver<Command>,
    attached: watch::Receiver<bool>,
    state: watch::Sender<Option<Envelope>>,
    preview: watch::Sender<Option<Envelope>>,
    metrics: mpsc::UnboundedSender<Envelope>,
    control: mpsc::UnboundedSender<Envelope>,
}

impl SessionTask {
    async fn run(mut self) {
        let cfg = self.hub.config.clone();
        let started = Instant::now();
        let clock = move || started.elapsed().as_secs_f64();
        let mut ticker = tokio::time::interval(cfg.loop_period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        let mut heartbeat = tokio::time::interval(cfg.heartbeat);
        heartbeat.set_missed_tick_behavior(MissedTickBehavior::Skip);
        let mut detached_since: Option<Instant> = None;
        loop {
            tokio::select! {
                cmd = self.commands.recv() => match cmd {
                    Some(Command::Text(text)) => {
                        for msg in self.core.handle_text(&text, clock()) {
                            let _ = self.control.send(msg);
                        }
                    }
                    Some(Command::Snapshot(reply)) => {
                        let _ = reply.send(self.core.snapshot());
                    }
                    None => break,
                },
                changed = self.attached.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    detached_since = if *self.attached.borrow_and_update() { None } else { Some(Instant::now()) };
                }
                _ = ticker.tick() => {
                    if let Some(since) = detached_since {
                        let idle = since.elapsed();
                        if idle >= cfg.idle_timeout {
                            break;
                        }
                        if idle >= cfg.pause_grace {
                            continue;
                        }
                    }
                    match self.core.tick(clock()) {
                        Ok(out) => {
                            self.state.send_replace(Some(out.state));
                            self.preview.send_replace(Some(out.preview));
                            let _ = self.metrics.send(out.metrics);
                            for e in out.events {
                                let _ = self.control.send(e);
                            }
                        }
                        Err(e) => {
                            let msg = format!("loop cycle failed: {e}");
                            let _ = self.control.send(self.core.event(Level::Error, "cycle_failed", msg));
                        }
                    }
                }
                _ = heartbeat.tick() => {
                    if detached_since.is_none() {
                        let _ = self.control.send(self.core.heartbeat());
                    }
                }
            }
        }
        self.hub.end(self.core.id());
    }
}
