//! Offline replay: a transcript trace plus a script of user actions, run on
//! a virtual clock against the mock backend.
//!
//! Events due at the same instant are handled in this order: generation
//! results, transcript text, timers (idle close, pending clicks), script
//! lines. Transcript text arrives at its end time.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::driver::{DriveError, Driver, Output};
use crate::eventlog::{self, Entry, LogEvent};
use crate::llm::{
    Delivery, Gateway, GenerationError, GenerationRequest, LaneBook, LaneLimits, LatencyClock, MockBackend, MockConfig,
    DEFAULT_TIMEOUT_MS,
};
use crate::prompt::{PromptKind, PromptSet};
use crate::session::{Effect, Note, SessionConfig};
use crate::store::{self, Manifest, SessionArchive};
use crate::transcript::{TimedText, TraceRecord};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("script line {line}: {reason}")]
    Script { line: usize, reason: String },
    #[error("trace: {0}")]
    Trace(String),
    #[error("archive: {0}")]
    Archive(String),
}

#[derive(Clone)]
pub struct ReplayConfig {
    pub session: SessionConfig,
    pub prompts: Arc<PromptSet>,
    pub mock: MockConfig,
    pub timeout_ms: u64,
    pub limits: LaneLimits,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            prompts: Arc::new(PromptSet::shipped()),
            mock: MockConfig::default(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            limits: LaneLimits::default(),
        }
    }
}

/// Keeps the user-action lines of a script (`touch`, `press`, `input`);
/// anything else a log may hold is ignored.
pub fn parse_script(text: &str) -> Result<Vec<(usize, Entry)>, ReplayError> {
    let entries = eventlog::parse_entries(text).map_err(|e| ReplayError::Script { line: e.line, reason: e.reason })?;
    let mut last = 0;
    let mut out = Vec::new();
    for (line, entry) in entries {
        if !matches!(entry.event, LogEvent::Touch { .. } | LogEvent::Press { .. } | LogEvent::Input { .. }) {
            continue;
        }
        if entry.t_ms < last {
            return Err(ReplayError::Script { line, reason: format!("time {} is before {last}", entry.t_ms) });
        }
        last = entry.t_ms;
        out.push((line, entry));
    }
    Ok(out)
}

/// Deterministic session id for a replay of these inputs.
pub fn replay_id(trace: &[TimedText], script: &[(usize, Entry)]) -> String {
    let mut h = Sha256::new();
    for t in trace {
        h.update(format!("{}\n", TraceRecord(t)));
    }
    h.update("--\n");
    for (_, e) in script {
        h.update(format!("{}\n", e.to_line()));
    }
    format!("r-{}", &hex::encode(h.finalize())[..16])
}

pub fn manifest(id: &str, created_at: u64, backend: &str, model: Option<String>, config: &SessionConfig, prompts: &PromptSet) -> Manifest {
    Manifest {
        id: id.to_string(),
        created_at,
        backend: backend.to_string(),
        model,
        customized: config.customized.iter().map(|c| c.word.clone()).collect(),
        templates: prompts.hashes().into_iter().map(|(k, h)| (k.as_str().to_string(), h)).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub id: String,
    pub output: Output,
    /// Notes as they stand at the end of the run.
    pub notes: Vec<Note>,
    pub ring_spans: Vec<(u64, u64)>,
    pub latencies: Vec<(PromptKind, u64)>,
    pub end_ms: u64,
}

impl Replay {
    pub fn metrics(&self) -> crate::metrics::Metrics {
        crate::metrics::compute(&self.notes, &self.ring_spans, &self.latencies)
    }

    pub fn archive(&self, config: &ReplayConfig) -> SessionArchive {
        let events = eventlog::write_entries(&self.output.events);
        let records = store::notes_text(&self.output.notes);
        SessionArchive {
            manifest: manifest(&self.id, 0, "mock", None, &config.session, &config.prompts),
            transcript: self.output.transcript.clone(),
            events: events.lines().map(str::to_string).collect(),
            notes: self.notes.clone(),
            note_records: records.lines().map(str::to_string).collect(),
        }
    }
}

// Tie classes at equal time.
const COMPLETION: u8 = 0;
const TRANSCRIPT: u8 = 1;
const SCRIPT: u8 = 3;

struct Sim {
    driver: Driver,
    book: LaneBook,
    gateway: Gateway,
    /// (time, insertion order) of pending deliveries.
    pending: BinaryHeap<Reverse<(u64, usize)>>,
    deliveries: Vec<Option<Delivery>>,
    now: u64,
}

impl Sim {
    fn schedule(&mut self, req: GenerationRequest) {
        let (at, delivery) = match futures::executor::block_on(self.gateway.complete(&req)) {
            Ok(r) => (self.now + r.latency_ms, Delivery::Completed(r)),
            Err(error) => {
                let after = match &error {
                    GenerationError::Timeout { after_ms, .. } => *after_ms,
                    _ => 0,
                };
                (self.now + after, Delivery::Failed { lane: req.lane, seq: req.seq, kind: req.kind, error })
            }
        };
        let order = self.deliveries.len();
        self.deliveries.push(Some(delivery));
        self.pending.push(Reverse((at, order)));
    }

    fn handle(&mut self, fx: Vec<Effect>) {
        for e in fx {
            match e {
                Effect::Start(req) => {
                    if let Some(req) = self.book.submit(req) {
                        self.schedule(req);
                    }
                }
                Effect::Cancel { lane, below } => {
                    for req in self.book.cancel(lane, below).start {
                        self.schedule(req);
                    }
                }
                Effect::Diagnostic { code, message } => tracing::debug!(%code, %message, "replay diagnostic"),
                _ => {}
            }
        }
    }

    fn next_completion(&self) -> Option<u64> {
        self.pending.peek().map(|Reverse((t, _))| *t)
    }

    fn deliver(&mut self) {
        let Reverse((at, idx)) = self.pending.pop().expect("pending delivery");
        self.now = at;
        let d = self.deliveries[idx].take().expect("delivered once");
        let fin = self.book.finish(d.lane(), d.seq());
        let fx = self.driver.delivered(at, d, fin.deliver);
        self.handle(fx);
        for req in fin.start {
            self.schedule(req);
        }
    }
}

/// Runs a replay to completion: until the script and trace are consumed and
/// no generation or timer is outstanding.
pub fn run(config: &ReplayConfig, trace: &[TimedText], script: &[(usize, Entry)]) -> Result<Replay, ReplayError> {
    let backend = Arc::new(MockBackend::new(MockConfig { realtime: false, ..config.mock.clone() }));
    let mut sim = Sim {
        driver: Driver::new(config.session.clone(), config.prompts.clone()),
        book: LaneBook::new(config.limits),
        gateway: Gateway::new(backend, config.timeout_ms, LatencyClock::Virtual),
        pending: BinaryHeap::new(),
        deliveries: Vec::new(),
        now: 0,
    };
    let (mut ti, mut si) = (0, 0);
    loop {
        let mut next: Option<(u64, u8)> = None;
        let mut consider = |t: Option<u64>, class: u8| {
            if let Some(t) = t {
                if next.is_none_or(|n| (t, class) < n) {
                    next = Some((t, class));
                }
            }
        };
        consider(sim.next_completion(), COMPLETION);
        consider(trace.get(ti).map(|t| t.end), TRANSCRIPT);
        consider(script.get(si).map(|(_, e)| e.t_ms), SCRIPT);

        // Timers go after results and text at the same instant, before script lines.
        if let Some(deadline) = sim.driver.next_deadline() {
            if next.is_none_or(|(t, class)| deadline < t || (deadline == t && class == SCRIPT)) {
                sim.now = sim.now.max(deadline);
                let fx = sim.driver.tick(deadline);
                sim.handle(fx);
                continue;
            }
        }
        let Some((t, class)) = next else { break };
        match class {
            COMPLETION => sim.deliver(),
            TRANSCRIPT => {
                sim.now = t;
                let fx = sim.driver.transcript(t, trace[ti].clone()).map_err(|e| ReplayError::Trace(e.to_string()))?;
                ti += 1;
                sim.handle(fx);
            }
            _ => {
                sim.now = t;
                let (line, entry) = &script[si];
                si += 1;
                let fx = match &entry.event {
                    LogEvent::Touch { on } => sim.driver.touch(t, *on),
                    LogEvent::Press { target } | LogEvent::Input { target, .. } => {
                        let target = sim.driver.resolve(target).map_err(|e| ReplayError::Script {
                            line: *line,
                            reason: e.to_string(),
                        })?;
                        match &entry.event {
                            LogEvent::Input { action, .. } => sim.driver.input(t, target, *action),
                            _ => sim.driver.press(t, target),
                        }
                    }
                    _ => unreachable!("parse_script keeps user actions only"),
                };
                sim.handle(fx);
            }
        }
    }
    sim.driver.finish(sim.now);
    let id = replay_id(trace, script);
    Ok(Replay {
        id,
        notes: sim.driver.session().notes().to_vec(),
        ring_spans: sim.driver.ring_spans().to_vec(),
        latencies: sim.driver.latencies().to_vec(),
        end_ms: sim.now,
        output: sim.driver.take_output(),
    })
}

/// Re-derives a session from its archived event log alone.
pub fn reproduce(archive: &SessionArchive, prompts: Arc<PromptSet>) -> Result<Replay, ReplayError> {
    let config = SessionConfig {
        customized: archive.manifest.customized.iter().map(crate::prompt::CustomizedKeyword::new).collect(),
    };
    let mut driver = Driver::new(config, prompts);
    let mut end = 0;
    for (line, entry) in archive.entries().map_err(|e| ReplayError::Archive(e.to_string()))? {
        driver.reapply(&entry).map_err(|e: DriveError| ReplayError::Script { line, reason: e.to_string() })?;
        end = end.max(entry.t_ms);
    }
    driver.finish(end);
    let mut output = driver.take_output();
    output.transcript = archive.transcript.clone();
    Ok(Replay {
        id: archive.manifest.id.clone(),
        notes: driver.session().notes().to_vec(),
        ring_spans: driver.ring_spans().to_vec(),
        latencies: driver.latencies().to_vec(),
        end_ms: end,
        output,
    })
}
