use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use notepilot_core::llm::{
    Backend, Gateway, HostedBackend, HostedConfig, LaneLimits, LatencyClock, MockBackend, MockConfig,
};
use notepilot_core::prompt::{CustomizedKeyword, PromptSet};
use notepilot_core::replay;
use notepilot_core::runtime::{self, Clock, LiveConfig, SessionHandle, TokioClock};
use notepilot_core::session::SessionConfig;
use notepilot_core::store::{ArchiveWriter, StoreError};
use notepilot_core::transcript;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};

use crate::config::{BackendKind, ServiceConfig};
use crate::protocol::{ClientMessage, ServerMessage, PROTOCOL_VERSION};

const HELLO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: address already in use (is another server running?)")]
    AddrInUse { addr: String },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("{0}")]
    Setup(String),
}

#[derive(Clone)]
pub struct Live {
    pub handle: SessionHandle,
    pub clock: Arc<dyn Clock>,
}

/// Sessions of one server, by id.
pub struct Registry {
    config: ServiceConfig,
    prompts: Arc<PromptSet>,
    gateway: Gateway,
    sessions: Mutex<HashMap<String, Live>>,
}

fn gateway(config: &ServiceConfig) -> Result<Gateway, ServeError> {
    let b = &config.backend;
    let backend: Arc<dyn Backend> = match b.kind {
        BackendKind::Mock => Arc::new(MockBackend::new(MockConfig {
            latency: b.mock_latency,
            jitter_ms: b.mock_jitter_ms,
            realtime: true,
            ..MockConfig::default()
        })),
        BackendKind::Hosted => {
            let api_key = std::env::var(&b.api_key_env)
                .map_err(|_| ServeError::Setup(format!("the hosted backend reads its API key from ${}, which is not set", b.api_key_env)))?;
            Arc::new(HostedBackend::new(HostedConfig {
                endpoint_url: b.endpoint_url.clone().unwrap_or_default(),
                model: b.model.clone().unwrap_or_default(),
                api_key,
            }))
        }
    };
    Ok(Gateway::new(backend, b.timeout_ms, LatencyClock::Wall))
}

impl Registry {
    pub fn new(config: ServiceConfig) -> Result<Self, ServeError> {
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptSet::from_dir(dir).map_err(|e| ServeError::Setup(e.to_string()))?,
            None => PromptSet::shipped(),
        };
        Ok(Self { gateway: gateway(&config)?, prompts: Arc::new(prompts), config, sessions: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn create(&self) -> Result<Live, StoreError> {
        let id = format!("s-{}", uuid::Uuid::new_v4().simple());
        let session = SessionConfig { customized: self.config.customized.iter().map(CustomizedKeyword::new).collect() };
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let manifest = replay::manifest(
            &id,
            created_at,
            self.config.backend.kind.as_str(),
            self.config.backend.model.clone(),
            &session,
            &self.prompts,
        );
        let writer = ArchiveWriter::create(&self.config.root, &manifest)?;
        let clock: Arc<dyn Clock> = Arc::new(TokioClock::start());
        let live = LiveConfig {
            id: id.clone(),
            session,
            prompts: self.prompts.clone(),
            gateway: self.gateway.clone(),
            limits: LaneLimits::default(),
            dedup_window: self.config.dedup_window,
        };
        let entry = Live { handle: runtime::spawn(live, clock.clone(), writer), clock };
        self.sessions.lock().unwrap().insert(id, entry.clone());
        Ok(entry)
    }

    pub fn get(&self, id: &str) -> Option<Live> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.lock().unwrap().keys().cloned().collect()
    }

    /// Stops every session, flushing its archive.
    pub async fn shutdown(&self) {
        let all: Vec<Live> = self.sessions.lock().unwrap().drain().map(|(_, v)| v).collect();
        for live in all {
            live.handle.shutdown().await;
        }
    }
}

pub struct Server {
    listener: TcpListener,
    registry: Arc<Registry>,
}

pub async fn bind(config: ServiceConfig) -> Result<Server, ServeError> {
    let addr = config.listen.clone();
    let registry = Arc::new(Registry::new(config)?);
    let listener = TcpListener::bind(&addr).await.map_err(|source| match source.kind() {
        io::ErrorKind::AddrInUse => ServeError::AddrInUse { addr: addr.clone() },
        _ => ServeError::Bind { addr: addr.clone(), source },
    })?;
    Ok(Server { listener, registry })
}

impl Server {
    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn registry(&self) -> Arc<Registry> {
        self.registry.clone()
    }

    /// Accepts connections until the listener fails.
    pub async fn run(self) -> io::Result<()> {
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let registry = self.registry.clone();
            tokio::spawn(async move {
                if let Err(e) = connection(stream, registry).await {
                    tracing::debug!(%peer, error = %e, "connection closed with error");
                }
            });
        }
    }
}

async fn connection(stream: TcpStream, registry: Arc<Registry>) -> io::Result<()> {
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();

    let first = tokio::time::timeout(HELLO_TIMEOUT, lines.next_line()).await;
    let hello = match first {
        Ok(Ok(Some(line))) => serde_json::from_str::<ClientMessage>(&line).ok(),
        Ok(Ok(None)) => return Ok(()),
        Ok(Err(e)) => return Err(e),
        Err(_) => None,
    };
    let (live, created) = match handshake(hello, &registry) {
        Ok(v) => v,
        Err(msg) => {
            write.write_all(msg.to_line().as_bytes()).await?;
            return Ok(());
        }
    };
    let id = live.handle.id().to_string();

    let (out, mut out_rx) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if write.write_all(msg.to_line().as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let _ = out.send(ServerMessage::Welcome { version: PROTOCOL_VERSION, session: id.clone(), created });
    let forwarder = forward_updates(live.handle.clone(), out.clone()).await;

    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let msg = match serde_json::from_str::<ClientMessage>(&line) {
            Ok(m) => m,
            Err(e) => {
                let _ = out.send(ServerMessage::error("bad_message", e.to_string()));
                continue;
            }
        };
        match msg {
            ClientMessage::Bye => break,
            ClientMessage::Hello { .. } => {
                let _ = out.send(ServerMessage::error("bad_message", "already greeted"));
            }
            ClientMessage::Command { cmd_id, command } => {
                let reply = match command.to_runtime() {
                    Ok(Some(cmd)) => match live.handle.command(cmd_id.clone(), cmd).await {
                        Ok(ack) => ServerMessage::ack(&id, cmd_id, ack),
                        Err(e) => ServerMessage::error("session_stopped", e.to_string()),
                    },
                    Ok(None) => play_demo(&registry, &live, &id, cmd_id),
                    Err(e) => ServerMessage::error("bad_message", e),
                };
                let _ = out.send(reply);
            }
        }
    }
    forwarder.abort();
    drop(out);
    let _ = writer.await;
    Ok(())
}

fn handshake(hello: Option<ClientMessage>, registry: &Registry) -> Result<(Live, bool), ServerMessage> {
    let Some(ClientMessage::Hello { version, token, session }) = hello else {
        return Err(ServerMessage::error("bad_message", "the first message must be hello"));
    };
    if version != PROTOCOL_VERSION {
        return Err(ServerMessage::error(
            "unsupported_version",
            format!("server speaks version {PROTOCOL_VERSION}, client sent {version}"),
        ));
    }
    if token != registry.config().token {
        return Err(ServerMessage::error("unauthorized", "invalid token"));
    }
    match session {
        Some(id) => registry
            .get(&id)
            .map(|l| (l, false))
            .ok_or_else(|| ServerMessage::error("unknown_session", format!("no live session {id}"))),
        None => registry.create().map(|l| (l, true)).map_err(|e| ServerMessage::error("storage", e.to_string())),
    }
}

/// Sends a snapshot, then every update. A subscriber that falls behind the
/// broadcast buffer gets a fresh snapshot instead of the missed updates.
async fn forward_updates(handle: SessionHandle, out: mpsc::UnboundedSender<ServerMessage>) -> tokio::task::JoinHandle<()> {
    let id = handle.id().to_string();
    let first = handle.subscribe().await;
    tokio::spawn(async move {
        let Ok(mut sub) = first else { return };
        loop {
            if out.send(ServerMessage::snapshot(&id, sub.snapshot.clone())).is_err() {
                return;
            }
            loop {
                match sub.updates.recv().await {
                    Ok(u) => {
                        if out.send(ServerMessage::update(&id, u)).is_err() {
                            return;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => break,
                    Err(broadcast::error::RecvError::Closed) => return,
                }
            }
            match handle.subscribe().await {
                Ok(s) => sub = s,
                Err(_) => return,
            }
        }
    })
}

fn play_demo(registry: &Registry, live: &Live, id: &str, cmd_id: Option<String>) -> ServerMessage {
    let ack = |accepted: bool, error: Option<String>| ServerMessage::Ack {
        session: id.into(),
        seq: 0,
        cmd_id: cmd_id.clone(),
        accepted,
        duplicate: false,
        error,
    };
    let Some(path) = &registry.config().demo_trace else {
        return ack(false, Some("no demo trace is configured".into()));
    };
    match std::fs::read_to_string(path).map_err(|e| e.to_string()).and_then(|t| transcript::parse_trace(&t).map_err(|e| e.to_string())) {
        Ok(records) => {
            drop(runtime::play_trace(live.handle.clone(), live.clock.clone(), records));
            ack(true, None)
        }
        Err(e) => ack(false, Some(format!("demo trace {}: {e}", path.display()))),
    }
}
