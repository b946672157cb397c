//! Completion gateway: runs rendered prompts against a backend, parses and
//! validates the response, retries once on invalid output and filters what
//! still violates the constraints.

mod dispatch;
mod hosted;
mod lanes;
mod mock;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use crate::prompt::{
    self, filter_items, parse_keyword_response, parse_sentence_response, validate_candidates, validate_derivation,
    validate_extraction, CustomizedChoice, KeywordList, PromptKind, PromptText, ValidationReport, Violation,
    ViolationKind,
};
use crate::transcript::Sentence;

pub use dispatch::{Delivery, Dispatcher};
pub use hosted::{HostedBackend, HostedConfig};
pub use lanes::{LaneBook, LaneLimits};
pub use mock::{mock_complete, Fault, FaultRule, LatencyProfile, MockBackend, MockConfig};

pub type Seq = u64;

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

/// Independent streams of generations. Cancellation and concurrency limits
/// apply per lane, so selection changes never cancel keyword extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Extraction,
    Organize,
    Derive,
    Refine,
}

impl Lane {
    pub const ALL: [Lane; 4] = [Lane::Extraction, Lane::Organize, Lane::Derive, Lane::Refine];

    pub fn as_str(self) -> &'static str {
        match self {
            Lane::Extraction => "extraction",
            Lane::Organize => "organize",
            Lane::Derive => "derive",
            Lane::Refine => "refine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

/// What a request is validated against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Extraction {
        sentence: Sentence,
    },
    Derive {
        origin: String,
        displayed: KeywordList,
    },
    Organize {
        /// Words every sentence must contain.
        keywords: Vec<String>,
        choice: CustomizedChoice,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub seq: Seq,
    pub lane: Lane,
    pub kind: PromptKind,
    pub prompt: PromptText,
    pub basis: Basis,
}

impl GenerationRequest {
    /// How many items a compliant response holds.
    pub fn expected_items(&self) -> usize {
        match self.kind {
            PromptKind::Extraction => prompt::MAX_CONTEXT_KEYWORDS,
            PromptKind::DeriveExclusive | PromptKind::DeriveContextual => prompt::DERIVED_PER_REQUEST,
            PromptKind::Organize => prompt::CANDIDATE_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub seq: Seq,
    pub lane: Lane,
    pub kind: PromptKind,
    /// Raw text of the final attempt.
    pub raw: String,
    /// Displayable items: everything here passed validation.
    pub items: Vec<String>,
    /// Report for the final attempt, before filtering.
    pub report: ValidationReport,
    pub latency_ms: u64,
    pub retried: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenerationError {
    #[error("generation {seq} timed out after {after_ms} ms")]
    Timeout { seq: Seq, after_ms: u64 },
    #[error("backend rejected credentials: {0}")]
    Auth(String),
    #[error("backend transport failure: {0}")]
    Transport(String),
}

impl GenerationError {
    /// Authentication failures stop the session's generations; the rest are
    /// reported and the session carries on.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GenerationError::Auth(_))
    }

    pub fn code(&self) -> &'static str {
        match self {
            GenerationError::Timeout { .. } => "timeout",
            GenerationError::Auth(_) => "auth",
            GenerationError::Transport(_) => "transport",
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("{0}")]
    Transport(String),
}

pub struct CompletionCall<'a> {
    pub request: &'a GenerationRequest,
    /// 0 for the first try, 1 for the retry.
    pub attempt: u32,
}

pub struct Completion {
    pub text: String,
    /// Latency the backend simulated, for virtual-clock accounting.
    pub simulated_latency_ms: Option<u64>,
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    async fn complete(&self, call: CompletionCall<'_>) -> Result<Completion, BackendError>;
}

/// How the gateway measures latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyClock {
    /// Monotonic wall clock; timeouts are real.
    Wall,
    /// Sum of backend-reported simulated latencies; timeouts compare against it.
    Virtual,
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    timeout_ms: u64,
    clock: LatencyClock,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, timeout_ms: u64, clock: LatencyClock) -> Self {
        Self { backend, timeout_ms, clock }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn clock(&self) -> LatencyClock {
        self.clock
    }

    /// Runs `req` to a validated result, retrying once on invalid output.
    pub async fn complete(&self, req: &GenerationRequest) -> Result<GenerationResult, GenerationError> {
        let mut latency_ms = 0;
        let mut attempt = 0;
        loop {
            let (text, spent) = self.call_once(req, attempt).await?;
            latency_ms += spent;
            let (items, report) = check(req, &text);
            if report.is_ok() || attempt == 1 {
                let items = filter_items(&items, &report, req.expected_items());
                return Ok(GenerationResult {
                    seq: req.seq,
                    lane: req.lane,
                    kind: req.kind,
                    raw: text,
                    items,
                    report,
                    latency_ms,
                    retried: attempt,
                });
            }
            tracing::debug!(seq = req.seq, kind = %req.kind, "invalid response, retrying");
            attempt += 1;
        }
    }

    async fn call_once(&self, req: &GenerationRequest, attempt: u32) -> Result<(String, u64), GenerationError> {
        let call = CompletionCall { request: req, attempt };
        let map_err = |e: BackendError| match e {
            BackendError::Auth(m) => GenerationError::Auth(m),
            BackendError::Transport(m) => GenerationError::Transport(m),
        };
        match self.clock {
            LatencyClock::Wall => {
                let started = Instant::now();
                let out = tokio::time::timeout(Duration::from_millis(self.timeout_ms), self.backend.complete(call))
                    .await
                    .map_err(|_| GenerationError::Timeout { seq: req.seq, after_ms: self.timeout_ms })?
                    .map_err(map_err)?;
                Ok((out.text, started.elapsed().as_millis() as u64))
            }
            LatencyClock::Virtual => {
                let out = self.backend.complete(call).await.map_err(map_err)?;
                let spent = out.simulated_latency_ms.unwrap_or(0);
                if spent > self.timeout_ms {
                    return Err(GenerationError::Timeout { seq: req.seq, after_ms: self.timeout_ms });
                }
                Ok((out.text, spent))
            }
        }
    }
}

/// Parses and validates one raw response against the request's basis.
pub fn check(req: &GenerationRequest, raw: &str) -> (Vec<String>, ValidationReport) {
    let empty = |expected| {
        let report = ValidationReport {
            violations: vec![Violation { item: None, kind: ViolationKind::WrongCount { expected, got: 0 } }],
        };
        (Vec::new(), report)
    };
    match (&req.basis, req.kind) {
        (Basis::Extraction { sentence }, _) => match parse_keyword_response(raw) {
            Ok(list) => {
                let report = validate_extraction(&list, &sentence.text);
                (list.into_vec(), report)
            }
            Err(_) => empty(1),
        },
        (Basis::Derive { origin, displayed }, _) => match parse_keyword_response(raw) {
            Ok(list) => {
                let report = validate_derivation(&list, origin, displayed, prompt::DERIVED_PER_REQUEST);
                (list.into_vec(), report)
            }
            Err(_) => empty(prompt::DERIVED_PER_REQUEST),
        },
        (Basis::Organize { keywords, choice }, _) => match parse_sentence_response(raw) {
            Ok(sentences) => {
                let report = validate_candidates(&sentences, keywords, &choice.form());
                (sentences, report)
            }
            Err(_) => empty(prompt::CANDIDATE_COUNT),
        },
    }
}
