//! Deterministic stand-in for a hosted model.
//!
//! Responses are a pure function of the request and the attempt number:
//! - extraction: the (up to) four longest non-stopword tokens of the
//!   sentence, longest first, ties by first occurrence;
//! - derivation: two words from a shipped table, starting at a stable hash
//!   of the origin and prompt kind, skipping displayed words and anything
//!   sharing the origin's lemma;
//! - organization: three template sentences built from the keywords, in
//!   the requested question form, at most ten words.
//!
//! Fault rules make selected attempts misbehave so retry and filtering can
//! be exercised.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Basis, Completion, CompletionCall, GenerationRequest, Seq};
use crate::prompt::{PromptKind, QuestionForm, MAX_CANDIDATE_WORDS, MAX_CONTEXT_KEYWORDS};
use crate::stemmer::same_lemma;
use crate::text;

fn stopwords() -> &'static BTreeSet<String> {
    static WORDS: OnceLock<BTreeSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| data_lines(include_str!("../../assets/stopwords.txt")).collect())
}

fn word_table() -> &'static [String] {
    static WORDS: OnceLock<Vec<String>> = OnceLock::new();
    WORDS.get_or_init(|| data_lines(include_str!("../../assets/mock_words.txt")).collect())
}

fn data_lines(src: &'static str) -> impl Iterator<Item = String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
}

/// Simulated latency per capability, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub extraction: u64,
    pub derivation: u64,
    pub organize: u64,
}

impl Default for LatencyProfile {
    /// Average delays reported for the hosted system.
    fn default() -> Self {
        Self { extraction: 4290, derivation: 1410, organize: 2890 }
    }
}

impl LatencyProfile {
    pub fn for_kind(&self, kind: PromptKind) -> u64 {
        match kind {
            PromptKind::Extraction => self.extraction,
            PromptKind::DeriveExclusive | PromptKind::DeriveContextual => self.derivation,
            PromptKind::Organize => self.organize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// One constraint-violating item (or an over-long sentence).
    NonCompliant,
    /// Blank response.
    Empty,
    /// Latency beyond any timeout.
    Stall,
}

/// Applies `fault` to attempts `< failing_attempts` of matching requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    pub kind: Option<PromptKind>,
    pub seq: Option<Seq>,
    pub failing_attempts: u32,
    pub fault: Fault,
}

impl FaultRule {
    fn matches(&self, req: &GenerationRequest, attempt: u32) -> bool {
        attempt < self.failing_attempts
            && self.kind.is_none_or(|k| k == req.kind)
            && self.seq.is_none_or(|s| s == req.seq)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockConfig {
    pub latency: LatencyProfile,
    /// Extra latency in `[0, jitter_ms]`, from a stable hash of
    /// (`jitter_seed`, seq, attempt).
    pub jitter_ms: u64,
    pub jitter_seed: u64,
    pub faults: Vec<FaultRule>,
    /// Actually sleep for the simulated latency (live sessions).
    pub realtime: bool,
}

const STALL_MS: u64 = 3_600_000;
const NOT_A_WORD: &str = "xylophonequartz";

impl MockConfig {
    pub fn latency_for(&self, req: &GenerationRequest, attempt: u32) -> u64 {
        if self.fault_for(req, attempt) == Some(Fault::Stall) {
            return STALL_MS;
        }
        let base = self.latency.for_kind(req.kind);
        if self.jitter_ms == 0 {
            return base;
        }
        let key = format!("{}:{}:{}", self.jitter_seed, req.seq, attempt);
        base + text::fnv1a64(key.as_bytes()) % (self.jitter_ms + 1)
    }

    fn fault_for(&self, req: &GenerationRequest, attempt: u32) -> Option<Fault> {
        self.faults.iter().find(|f| f.matches(req, attempt)).map(|f| f.fault)
    }
}

pub struct MockBackend {
    config: MockConfig,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    async fn complete(&self, call: CompletionCall<'_>) -> Result<Completion, BackendError> {
        let latency = self.config.latency_for(call.request, call.attempt);
        if self.config.realtime {
            tokio::time::sleep(Duration::from_millis(latency)).await;
        }
        let text = match self.config.fault_for(call.request, call.attempt) {
            Some(Fault::Empty) => String::new(),
            Some(Fault::NonCompliant) => non_compliant(call.request),
            Some(Fault::Stall) | None => mock_complete(call.request),
        };
        Ok(Completion { text, simulated_latency_ms: Some(latency) })
    }
}

/// The compliant mock response for `req`.
pub fn mock_complete(req: &GenerationRequest) -> String {
    match &req.basis {
        Basis::Extraction { sentence } => extract(&sentence.text).join("\n"),
        Basis::Derive { origin, displayed } => {
            let mut picked: Vec<&str> = Vec::new();
            let table = word_table();
            let key = format!("{}\u{0}{}", origin.to_lowercase(), req.kind.as_str());
            let start = (text::fnv1a64(key.as_bytes()) % table.len() as u64) as usize;
            for i in 0..table.len() {
                let w = table[(start + i) % table.len()].as_str();
                if picked.len() == 2 {
                    break;
                }
                if displayed.contains(w) || same_lemma(w, &origin.to_lowercase()) || picked.contains(&w) {
                    continue;
                }
                picked.push(w);
            }
            picked.join("\n")
        }
        Basis::Organize { keywords, choice } => organize(keywords, &choice.form()).join("\n"),
    }
}

fn extract(sentence: &str) -> Vec<String> {
    let stop = stopwords();
    let mut seen: Vec<String> = Vec::new();
    for t in text::tokens_lower(sentence) {
        if !stop.contains(&t) && !seen.contains(&t) {
            seen.push(t);
        }
    }
    // stable sort keeps first-occurrence order among equal lengths
    seen.sort_by_key(|w| std::cmp::Reverse(w.chars().count()));
    seen.truncate(MAX_CONTEXT_KEYWORDS);
    seen
}

fn organize(keywords: &[String], form: &QuestionForm) -> Vec<String> {
    let frames: [(String, &str, &str); 3] = match form {
        QuestionForm::StartWith(words) => {
            let wh = words.first().cloned().unwrap_or_else(|| "What".into());
            [(wh.clone(), "noted", "?"), (wh.clone(), "mentioned", "?"), (wh, "discussed", "?")]
        }
        QuestionForm::NoQuestionWordStart(_) => [
            ("Is".into(), "noted", "?"),
            ("Was".into(), "mentioned", "?"),
            ("Were".into(), "discussed", "?"),
        ],
        QuestionForm::Fact => [
            ("Note about".into(), "", "."),
            ("Remember".into(), "", "."),
            ("Key point".into(), "", "."),
        ],
    };
    frames
        .iter()
        .map(|(head, tail, mark)| {
            let fixed = text::word_count(head) + text::word_count(tail);
            let mut words: Vec<&str> = Vec::new();
            for kw in keywords {
                let n = text::word_count(kw);
                if fixed + words.iter().map(|w| text::word_count(w)).sum::<usize>() + n > MAX_CANDIDATE_WORDS {
                    break;
                }
                words.push(kw);
            }
            let mut parts = vec![head.as_str()];
            parts.extend(words);
            if !tail.is_empty() {
                parts.push(tail);
            }
            format!("{}{}", parts.join(" "), mark)
        })
        .collect()
}

fn non_compliant(req: &GenerationRequest) -> String {
    match &req.basis {
        Basis::Extraction { .. } => format!("{NOT_A_WORD}\n{}", mock_complete(req)),
        Basis::Derive { origin, .. } => {
            let good = mock_complete(req);
            let first_good = good.lines().next().unwrap_or_default();
            format!("{}\n{first_good}", origin.to_lowercase())
        }
        Basis::Organize { .. } => {
            let good = mock_complete(req);
            let mut lines: Vec<String> = good.lines().map(str::to_string).collect();
            if let Some(first) = lines.first_mut() {
                let body = first.trim_end_matches(['?', '.']).to_string();
                let mark = &first[body.len()..];
                let pad = MAX_CANDIDATE_WORDS + 1 - text::word_count(&body).min(MAX_CANDIDATE_WORDS);
                *first = format!("{body}{}{mark}", " indeed".repeat(pad));
            }
            lines.join("\n")
        }
    }
}
