//! Live sessions: one tokio task per session owns the [`Driver`], the
//! generation [`Dispatcher`] and the archive writer. Everything else talks
//! to it through a [`SessionHandle`].
//!
//! Subscribers get a snapshot of every view part, then one update per
//! changed part. Snapshots and updates share a per-session sequence, so a
//! snapshot at `n` followed by updates `> n` reproduces the current view.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::driver::Driver;
use crate::llm::{Dispatcher, Gateway, LaneLimits};
use crate::prompt::PromptSet;
use crate::session::{Action, Effect, SessionConfig, Target};
use crate::store::ArchiveWriter;
use crate::transcript::TimedText;

/// Session time source, in milliseconds since the session started.
pub trait Clock: Send + Sync + 'static {
    fn now_ms(&self) -> u64;
    fn sleep_until_ms(&self, at: u64) -> Pin<Box<dyn Future<Output = ()> + Send>>;
}

/// The tokio clock. Under `tokio::time::pause` it becomes a virtual clock
/// that jumps to the next timer whenever the runtime is idle.
pub struct TokioClock {
    origin: tokio::time::Instant,
}

impl TokioClock {
    pub fn start() -> Self {
        Self { origin: tokio::time::Instant::now() }
    }
}

impl Clock for TokioClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_until_ms(&self, at: u64) -> Pin<Box<dyn Future<Output = ()> + Send>> {
        Box::pin(tokio::time::sleep_until(self.origin + Duration::from_millis(at)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Touch { on: bool },
    /// A raw press; the session discriminates clicks from double-clicks.
    Press { target: Target },
    Input { target: Target, action: Action },
    Transcript(TimedText),
    EndOfTranscript,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ack {
    pub accepted: bool,
    pub duplicate: bool,
    /// Session sequence once the command's updates were published.
    pub seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A message to subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Update {
    Part { seq: u64, part: String, data: Value },
    Notice { seq: u64, code: String, message: String },
}

impl Update {
    pub fn seq(&self) -> u64 {
        match self {
            Update::Part { seq, .. } | Update::Notice { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub seq: u64,
    pub parts: BTreeMap<String, Value>,
}

pub struct Subscription {
    pub snapshot: Snapshot,
    pub updates: broadcast::Receiver<Update>,
}

enum Request {
    Command { cmd_id: Option<String>, command: Command, reply: oneshot::Sender<Ack> },
    Subscribe { reply: oneshot::Sender<Subscription> },
    Snapshot { reply: oneshot::Sender<Snapshot> },
    Shutdown { reply: oneshot::Sender<()> },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("session has stopped")]
pub struct Stopped;

/// Cheap to clone; every clone addresses the same session task.
#[derive(Clone)]
pub struct SessionHandle {
    id: Arc<str>,
    tx: mpsc::Sender<Request>,
}

impl SessionHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Applies `command` unless a command with the same `cmd_id` was already
    /// applied.
    pub async fn command(&self, cmd_id: Option<String>, command: Command) -> Result<Ack, Stopped> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Request::Command { cmd_id, command, reply }).await.map_err(|_| Stopped)?;
        rx.await.map_err(|_| Stopped)
    }

    pub async fn subscribe(&self) -> Result<Subscription, Stopped> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Request::Subscribe { reply }).await.map_err(|_| Stopped)?;
        rx.await.map_err(|_| Stopped)
    }

    pub async fn snapshot(&self) -> Result<Snapshot, Stopped> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Request::Snapshot { reply }).await.map_err(|_| Stopped)?;
        rx.await.map_err(|_| Stopped)
    }

    /// Stops the session after closing its open ring span and flushing.
    pub async fn shutdown(&self) {
        let (reply, rx) = oneshot::channel();
        if self.tx.send(Request::Shutdown { reply }).await.is_ok() {
            let _ = rx.await;
        }
    }
}

pub struct LiveConfig {
    pub id: String,
    pub session: SessionConfig,
    pub prompts: Arc<PromptSet>,
    pub gateway: Gateway,
    pub limits: LaneLimits,
    /// Command ids remembered for deduplication.
    pub dedup_window: usize,
}

const UPDATE_BUFFER: usize = 1024;

pub fn spawn(config: LiveConfig, clock: Arc<dyn Clock>, writer: ArchiveWriter) -> SessionHandle {
    let (tx, rx) = mpsc::channel(256);
    let (deliver_tx, deliveries) = mpsc::unbounded_channel();
    let (updates, _) = broadcast::channel(UPDATE_BUFFER);
    let id: Arc<str> = config.id.clone().into();
    let mut actor = Actor {
        driver: Driver::new(config.session, config.prompts),
        dispatcher: Dispatcher::new(config.gateway, config.limits, deliver_tx),
        writer,
        clock,
        updates,
        seq: 0,
        parts: BTreeMap::new(),
        seen: HashMap::new(),
        seen_order: VecDeque::new(),
        dedup_window: config.dedup_window.max(1),
        now: 0,
        id: id.clone(),
    };
    actor.parts = actor.current_parts();
    tokio::spawn(actor.run(rx, deliveries));
    SessionHandle { id, tx }
}

struct Actor {
    driver: Driver,
    dispatcher: Dispatcher,
    writer: ArchiveWriter,
    clock: Arc<dyn Clock>,
    updates: broadcast::Sender<Update>,
    seq: u64,
    parts: BTreeMap<String, Value>,
    /// Acks of recently applied command ids.
    seen: HashMap<String, Ack>,
    seen_order: VecDeque<String>,
    dedup_window: usize,
    now: u64,
    id: Arc<str>,
}

impl Actor {
    async fn run(mut self, mut rx: mpsc::Receiver<Request>, mut deliveries: mpsc::UnboundedReceiver<crate::llm::Delivery>) {
        loop {
            let timer = self.driver.next_deadline().map(|at| self.clock.sleep_until_ms(at));
            let timer = async move {
                match timer {
                    Some(t) => t.await,
                    None => std::future::pending().await,
                }
            };
            tokio::select! {
                biased;
                Some(d) = deliveries.recv() => {
                    let now = self.tick_clock();
                    let accepted = self.dispatcher.accept(&d);
                    let fx = self.driver.delivered(now, d, accepted);
                    self.settle(fx);
                }
                req = rx.recv() => match req {
                    Some(Request::Shutdown { reply }) => {
                        let now = self.tick_clock();
                        self.driver.finish(now);
                        self.settle(Vec::new());
                        let _ = reply.send(());
                        break;
                    }
                    Some(req) => self.request(req),
                    None => break,
                },
                _ = timer => {
                    let now = self.tick_clock();
                    let fx = self.driver.tick(now);
                    self.settle(fx);
                }
            }
        }
        tracing::debug!(session = %self.id, "session stopped");
    }

    fn tick_clock(&mut self) -> u64 {
        self.now = self.now.max(self.clock.now_ms());
        self.now
    }

    fn request(&mut self, req: Request) {
        match req {
            Request::Subscribe { reply } => {
                let updates = self.updates.subscribe();
                let _ = reply.send(Subscription { snapshot: self.snapshot(), updates });
            }
            Request::Snapshot { reply } => {
                let _ = reply.send(self.snapshot());
            }
            Request::Command { cmd_id, command, reply } => {
                let ack = self.command(cmd_id, command);
                let _ = reply.send(ack);
            }
            Request::Shutdown { .. } => unreachable!("handled by the loop"),
        }
    }

    fn command(&mut self, cmd_id: Option<String>, command: Command) -> Ack {
        if let Some(id) = &cmd_id {
            if let Some(ack) = self.seen.get(id) {
                return Ack { duplicate: true, ..ack.clone() };
            }
        }
        if self.writer.is_degraded() {
            return Ack {
                accepted: false,
                duplicate: false,
                seq: self.seq,
                error: Some("storage is read-only after a write failure".into()),
            };
        }
        let now = self.tick_clock();
        let fx = match command {
            Command::Touch { on } => Ok(self.driver.touch(now, on)),
            Command::Press { target } => Ok(self.driver.press(now, target)),
            Command::Input { target, action } => Ok(self.driver.input(now, target, action)),
            Command::Transcript(text) => self.driver.transcript(now, text).map_err(|e| e.to_string()),
            Command::EndOfTranscript => Ok(self.driver.end_of_transcript(now)),
        };
        let ack = match fx {
            Ok(fx) => {
                let rejected = fx.iter().find_map(|e| match e {
                    Effect::Rejected { reason } => Some(reason.clone()),
                    _ => None,
                });
                self.settle(fx);
                Ack { accepted: rejected.is_none(), duplicate: false, seq: self.seq, error: rejected }
            }
            Err(error) => Ack { accepted: false, duplicate: false, seq: self.seq, error: Some(error) },
        };
        if let Some(id) = cmd_id {
            self.remember(id, ack.clone());
        }
        ack
    }

    fn remember(&mut self, id: String, ack: Ack) {
        if self.seen_order.len() == self.dedup_window {
            if let Some(old) = self.seen_order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.seen.insert(id.clone(), ack);
        self.seen_order.push_back(id);
    }

    /// Starts and cancels generations, persists the log and publishes what
    /// changed.
    fn settle(&mut self, fx: Vec<Effect>) {
        for e in fx {
            match e {
                Effect::Start(req) => self.dispatcher.submit(req),
                Effect::Cancel { lane, below } => self.dispatcher.cancel(lane, below),
                Effect::Rejected { reason } => self.notice("rejected", reason),
                Effect::Diagnostic { code, message } => self.notice(&code, message),
                Effect::Recorded(_) | Effect::Revised(_) => {}
            }
        }
        let out = self.driver.take_output();
        let was_degraded = self.writer.is_degraded();
        if let Err(e) = self.writer.append(&out) {
            if !was_degraded {
                tracing::error!(session = %self.id, error = %e, "archive write failed; session is now read-only");
                self.notice("storage_degraded", e.to_string());
            }
        }
        for (name, value) in self.current_parts() {
            if self.parts.get(&name) != Some(&value) {
                self.seq += 1;
                let _ = self.updates.send(Update::Part { seq: self.seq, part: name.clone(), data: value.clone() });
                self.parts.insert(name, value);
            }
        }
    }

    fn notice(&mut self, code: &str, message: String) {
        self.seq += 1;
        let _ = self.updates.send(Update::Notice { seq: self.seq, code: code.to_string(), message });
    }

    fn current_parts(&self) -> BTreeMap<String, Value> {
        self.driver.session().view().parts().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot { seq: self.seq, parts: self.parts.clone() }
    }
}

/// Streams a trace into a session in real time, shifted to start now.
pub fn play_trace(handle: SessionHandle, clock: Arc<dyn Clock>, records: Vec<TimedText>) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let offset = clock.now_ms();
        for r in records {
            let Ok(shifted) = TimedText::new(r.text, r.start + offset, r.end + offset) else { continue };
            clock.sleep_until_ms(shifted.end).await;
            if handle.command(None, Command::Transcript(shifted)).await.is_err() {
                return;
            }
        }
        let _ = handle.command(None, Command::EndOfTranscript).await;
    })
}
