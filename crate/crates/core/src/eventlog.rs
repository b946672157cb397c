//! Line codec for session logs and replay scripts.
//!
//! A line is `t_ms<TAB>kind<TAB>payload`, where the payload is a
//! space-separated `key=value` list in a fixed per-kind order. Values are
//! percent-encoded; list values join their encoded items with `|`.

use std::fmt;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};
use thiserror::Error;

use crate::llm::{GenerationError, GenerationResult, Lane, Seq};
use crate::prompt::{PromptKind, ValidationReport};
use crate::session::{Action, Direction, KeywordId, KeywordKind, NoteId, NoteKind, Surface, Target};
use crate::transcript::Sentence;

const RESERVED: &AsciiSet = &CONTROLS.add(b' ').add(b'%').add(b'=').add(b'|');

pub fn encode(value: &str) -> String {
    utf8_percent_encode(value, RESERVED).to_string()
}

pub fn decode(raw: &str) -> Result<String, String> {
    percent_decode_str(raw).decode_utf8().map(|s| s.into_owned()).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct LogError {
    pub line: usize,
    pub reason: String,
}

/// One untyped log line. Values are held encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogLine {
    pub t_ms: u64,
    pub kind: String,
    fields: Vec<(String, String)>,
}

impl LogLine {
    pub fn new(t_ms: u64, kind: &str) -> Self {
        Self { t_ms, kind: kind.to_string(), fields: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.fields.push((key.to_string(), encode(&value.to_string())));
        self
    }

    pub fn with_list<S: AsRef<str>>(mut self, key: &str, items: &[S]) -> Self {
        let raw: Vec<String> = items.iter().map(|s| encode(s.as_ref())).collect();
        self.fields.push((key.to_string(), raw.join("|")));
        self
    }

    pub fn has(&self, key: &str) -> bool {
        self.fields.iter().any(|(k, _)| k == key)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.raw(key).and_then(|v| decode(v).ok())
    }

    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Some(Vec::new());
        }
        raw.split('|').map(|item| decode(item).ok()).collect()
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self, LogError> {
        let bad = |reason: String| LogError { line: line_no, reason };
        let mut parts = line.splitn(3, '\t');
        let t = parts.next().unwrap_or_default();
        let kind = parts.next().ok_or_else(|| bad("missing event kind".into()))?;
        let payload = parts.next().unwrap_or_default();
        let t_ms = t.parse().map_err(|_| bad(format!("time {t:?} is not an integer")))?;
        if kind.is_empty() || !kind.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
            return Err(bad(format!("bad event kind {kind:?}")));
        }
        let mut fields = Vec::new();
        for pair in payload.split(' ').filter(|p| !p.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| bad(format!("field {pair:?} has no '='")))?;
            decode(v).map_err(|e| bad(format!("field {k}: {e}")))?;
            fields.push((k.to_string(), v.to_string()));
        }
        Ok(Self { t_ms, kind: kind.to_string(), fields })
    }
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t", self.t_ms, self.kind)?;
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Parses every non-blank, non-`#` line.
pub fn parse_lines(input: &str) -> Result<Vec<(usize, LogLine)>, LogError> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| LogLine::parse(l, i + 1).map(|line| (i + 1, line)))
        .collect()
}

/// How an input names its target. Scripts may name keywords by word; the
/// word is resolved against the screen when the line is replayed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetRef {
    Exact(Target),
    KeywordWord(String),
    ChipWord(String),
}

/// How the session took an input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputResult {
    Ok,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEvent {
    Sentence(Sentence),
    Touch {
        on: bool,
    },
    /// A raw press, before click discrimination. Scripts only.
    Press {
        target: TargetRef,
    },
    Input {
        target: TargetRef,
        action: Action,
        /// The keyword the target resolved to, if any.
        keyword: Option<KeywordId>,
        word: Option<String>,
        kind: Option<KeywordKind>,
        result: Option<InputResult>,
    },
    Generation(GenerationResult),
    GenerationFailed {
        lane: Lane,
        seq: Seq,
        kind: PromptKind,
        error: GenerationError,
    },
    /// A result that arrived after its request was cancelled.
    Dropped {
        lane: Lane,
        seq: Seq,
        kind: PromptKind,
    },
    Recorded {
        note: NoteId,
        kind: NoteKind,
    },
    Revised {
        note: NoteId,
        revision: usize,
    },
}

/// A timestamped typed event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub t_ms: u64,
    pub event: LogEvent,
}

fn target_fields(line: LogLine, target: &TargetRef) -> LogLine {
    match target {
        TargetRef::KeywordWord(w) => line.with("target", "keyword").with("word", w),
        TargetRef::ChipWord(w) => line.with("target", "chip").with("word", w),
        TargetRef::Exact(t) => match t {
            Target::Keyword(id) => line.with("target", "keyword").with("id", id),
            Target::Chip(id) => line.with("target", "chip").with("id", id),
            Target::RingSlot(slot) => line.with("target", "ring").with("slot", slot),
            Target::Candidate(i) => line.with("target", "candidate").with("index", i),
            Target::Arrow { surface, dir } => {
                line.with("target", "arrow").with("surface", surface.as_str()).with("dir", dir.as_str())
            }
            Target::NotesButton => line.with("target", "notes"),
            Target::NoteItem(id) => line.with("target", "note").with("id", id),
            Target::RefineCandidate(i) => line.with("target", "refine").with("index", i),
            Target::Back => line.with("target", "back"),
        },
    }
}

impl Entry {
    pub fn new(t_ms: u64, event: LogEvent) -> Self {
        Self { t_ms, event }
    }

    pub fn to_line(&self) -> LogLine {
        let t = self.t_ms;
        match &self.event {
            LogEvent::Sentence(s) => LogLine::new(t, "sentence")
                .with("id", s.id)
                .with("ordinal", s.ordinal)
                .with("start", s.start)
                .with("end", s.end)
                .with("text", &s.text),
            LogEvent::Touch { on } => LogLine::new(t, "touch").with("on", u8::from(*on)),
            LogEvent::Press { target } => target_fields(LogLine::new(t, "press"), target),
            LogEvent::Input { target, action, keyword, word, kind, result } => {
                let mut line = target_fields(LogLine::new(t, "input"), target).with("action", action.as_str());
                if let Some(k) = keyword {
                    line = line.with("keyword", k);
                }
                let by_word = matches!(target, TargetRef::KeywordWord(_) | TargetRef::ChipWord(_));
                if let (Some(w), false) = (word, by_word) {
                    line = line.with("word", w);
                }
                if let Some(k) = kind {
                    line = line.with("kind", k.as_str());
                }
                if let Some(r) = result {
                    line = line.with("result", if *r == InputResult::Ok { "ok" } else { "rejected" });
                }
                line
            }
            LogEvent::Generation(r) => LogLine::new(t, "generation")
                .with("seq", r.seq)
                .with("lane", r.lane.as_str())
                .with("kind", r.kind)
                .with_list("items", &r.items)
                .with("latency", r.latency_ms)
                .with("retried", r.retried)
                .with("raw", &r.raw),
            LogEvent::GenerationFailed { lane, seq, kind, error } => {
                let line = LogLine::new(t, "generation_failed")
                    .with("seq", seq)
                    .with("lane", lane.as_str())
                    .with("kind", kind)
                    .with("code", error.code());
                match error {
                    GenerationError::Timeout { after_ms, .. } => line.with("after", after_ms),
                    GenerationError::Auth(m) | GenerationError::Transport(m) => line.with("message", m),
                }
            }
            LogEvent::Dropped { lane, seq, kind } => {
                LogLine::new(t, "dropped").with("seq", seq).with("lane", lane.as_str()).with("kind", kind)
            }
            LogEvent::Recorded { note, kind } => LogLine::new(t, "recorded").with("note", note).with("kind", kind.as_str()),
            LogEvent::Revised { note, revision } => {
                LogLine::new(t, "revised").with("note", note).with("revision", revision)
            }
        }
    }

    pub fn from_line(line: &LogLine, line_no: usize) -> Result<Self, LogError> {
        let bad = |reason: String| LogError { line: line_no, reason };
        let text = |key: &str| line.get(key).ok_or_else(|| bad(format!("{} needs {key}=", line.kind)));
        let num = |key: &str| -> Result<u64, LogError> {
            text(key)?.parse().map_err(|_| bad(format!("{key}= is not an integer")))
        };
        let lane = || Lane::parse(&text("lane")?).ok_or_else(|| bad("unknown lane".into()));
        let prompt_kind = || PromptKind::parse(&text("kind")?).ok_or_else(|| bad("unknown prompt kind".into()));
        let event = match line.kind.as_str() {
            "sentence" => LogEvent::Sentence(Sentence {
                id: num("id")?,
                ordinal: num("ordinal")? as usize,
                start: num("start")?,
                end: num("end")?,
                text: text("text")?,
            }),
            "touch" => LogEvent::Touch { on: num("on")? != 0 },
            "press" => LogEvent::Press { target: parse_target(line, line_no)? },
            "input" => {
                let target = parse_target(line, line_no)?;
                let action = Action::parse(&text("action")?).ok_or_else(|| bad("unknown action".into()))?;
                let kind = match line.get("kind") {
                    Some(k) => Some(KeywordKind::parse(&k).ok_or_else(|| bad(format!("unknown keyword kind {k:?}")))?),
                    None => None,
                };
                let result = match line.get("result").as_deref() {
                    Some("ok") => Some(InputResult::Ok),
                    Some("rejected") => Some(InputResult::Rejected),
                    Some(other) => return Err(bad(format!("unknown result {other:?}"))),
                    None => None,
                };
                let word = match target {
                    TargetRef::Exact(_) => line.get("word"),
                    _ => None,
                };
                let keyword = line.has("keyword").then(|| num("keyword")).transpose()?;
                LogEvent::Input { target, action, keyword, word, kind, result }
            }
            "generation" => LogEvent::Generation(GenerationResult {
                seq: num("seq")?,
                lane: lane()?,
                kind: prompt_kind()?,
                raw: line.get("raw").unwrap_or_default(),
                items: line.list("items").ok_or_else(|| bad("generation needs items=".into()))?,
                report: ValidationReport::default(),
                latency_ms: num("latency")?,
                retried: num("retried")? as u32,
            }),
            "generation_failed" => {
                let seq = num("seq")?;
                let error = match text("code")?.as_str() {
                    "timeout" => GenerationError::Timeout { seq, after_ms: num("after")? },
                    "auth" => GenerationError::Auth(line.get("message").unwrap_or_default()),
                    "transport" => GenerationError::Transport(line.get("message").unwrap_or_default()),
                    other => return Err(bad(format!("unknown error code {other:?}"))),
                };
                LogEvent::GenerationFailed { lane: lane()?, seq, kind: prompt_kind()?, error }
            }
            "dropped" => LogEvent::Dropped { lane: lane()?, seq: num("seq")?, kind: prompt_kind()? },
            "recorded" => LogEvent::Recorded {
                note: num("note")?,
                kind: NoteKind::parse(&text("kind")?).ok_or_else(|| bad("unknown note kind".into()))?,
            },
            "revised" => LogEvent::Revised { note: num("note")?, revision: num("revision")? as usize },
            other => return Err(bad(format!("unknown event kind {other:?}"))),
        };
        Ok(Entry { t_ms: line.t_ms, event })
    }
}

fn parse_target(line: &LogLine, line_no: usize) -> Result<TargetRef, LogError> {
    let bad = |reason: String| LogError { line: line_no, reason };
    let target = line.get("target").ok_or_else(|| bad("missing target=".into()))?;
    let num = |key: &str| -> Result<u64, LogError> {
        line.get(key)
            .ok_or_else(|| bad(format!("target {target} needs {key}=")))?
            .parse()
            .map_err(|_| bad(format!("{key}= is not an integer")))
    };
    let by_id_or_word = |exact: fn(KeywordId) -> Target, word: fn(String) -> TargetRef| {
        if line.has("id") {
            Ok(TargetRef::Exact(exact(num("id")?)))
        } else {
            line.get("word").map(word).ok_or_else(|| bad(format!("target {target} needs id= or word=")))
        }
    };
    Ok(match target.as_str() {
        "keyword" => by_id_or_word(Target::Keyword, TargetRef::KeywordWord)?,
        "chip" => by_id_or_word(Target::Chip, TargetRef::ChipWord)?,
        "ring" => TargetRef::Exact(Target::RingSlot(num("slot")? as usize)),
        "candidate" => TargetRef::Exact(Target::Candidate(num("index")? as usize)),
        "arrow" => {
            let surface = line.get("surface").and_then(|s| Surface::parse(&s));
            let dir = line.get("dir").and_then(|d| Direction::parse(&d));
            match (surface, dir) {
                (Some(surface), Some(dir)) => TargetRef::Exact(Target::Arrow { surface, dir }),
                _ => return Err(bad("arrow needs surface= and dir=".into())),
            }
        }
        "notes" => TargetRef::Exact(Target::NotesButton),
        "note" => TargetRef::Exact(Target::NoteItem(num("id")?)),
        "refine" => TargetRef::Exact(Target::RefineCandidate(num("index")? as usize)),
        "back" => TargetRef::Exact(Target::Back),
        other => return Err(bad(format!("unknown target {other:?}"))),
    })
}

/// Parses a log or script into typed entries.
pub fn parse_entries(input: &str) -> Result<Vec<(usize, Entry)>, LogError> {
    parse_lines(input)?.into_iter().map(|(n, line)| Entry::from_line(&line, n).map(|e| (n, e))).collect()
}

pub fn write_entries<'a>(entries: impl IntoIterator<Item = &'a Entry>) -> String {
    entries.into_iter().map(|e| format!("{}\n", e.to_line())).collect()
}
