//! Timed text ingestion and sentence segmentation.
//!
//! Speech-to-text adapters emit [`TimedText`] events. The [`Segmenter`]
//! folds them into [`Sentence`]s: a silence longer than
//! [`PAUSE_THRESHOLD_MS`] between two events closes the open sentence, and
//! so does terminal punctuation at the end of an event. A sentence left open
//! for [`IDLE_CLOSE_MS`] without new input is force-closed by [`Segmenter::tick`].
//!
//! [`Windower`] is the replay-side stand-in for audio capture: it slices a
//! timed token stream into capture windows of [`CAPTURE_WINDOW_MS`].

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub const PAUSE_THRESHOLD_MS: u64 = 1000;
pub const CAPTURE_WINDOW_MS: u64 = 4000;
pub const IDLE_CLOSE_MS: u64 = 5000;

pub type SentenceId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedText {
    pub text: String,
    pub start: u64,
    pub end: u64,
}

impl TimedText {
    pub fn new(text: impl Into<String>, start: u64, end: u64) -> Result<Self, TranscriptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TranscriptError::EmptyText { start });
        }
        if end < start {
            return Err(TranscriptError::InvertedSpan { start, end });
        }
        Ok(Self { text, start, end })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: SentenceId,
    pub text: String,
    pub start: u64,
    pub end: u64,
    pub ordinal: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub sentences: Vec<Sentence>,
}

impl Transcript {
    pub fn push(&mut self, sentence: Sentence) {
        debug_assert_eq!(sentence.ordinal, self.sentences.len());
        self.sentences.push(sentence);
    }

    pub fn get(&self, id: SentenceId) -> Option<&Sentence> {
        self.sentences.iter().find(|s| s.id == id)
    }

    /// The last `n` sentences up to and including `upto` (or the end of the
    /// transcript when `upto` is `None`).
    pub fn window(&self, upto: Option<SentenceId>, n: usize) -> &[Sentence] {
        let end = match upto {
            Some(id) => self
                .sentences
                .iter()
                .position(|s| s.id == id)
                .map_or(self.sentences.len(), |p| p + 1),
            None => self.sentences.len(),
        };
        &self.sentences[end.saturating_sub(n)..end]
    }

    pub fn last(&self) -> Option<&Sentence> {
        self.sentences.last()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("event starting at {start} ms has no text")]
    EmptyText { start: u64 },
    #[error("event ends ({end} ms) before it starts ({start} ms)")]
    InvertedSpan { start: u64, end: u64 },
    #[error("event starts at {start} ms, before the previous event start {previous} ms")]
    OutOfOrder { start: u64, previous: u64 },
    #[error("trace line {line}: {reason}")]
    TraceFormat { line: usize, reason: String },
    #[error("trace io: {0}")]
    Io(String),
}

/// Open-sentence buffer plus the bookkeeping the boundary rules need.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmenter {
    open: Vec<TimedText>,
    last_start: Option<u64>,
    last_end: Option<u64>,
    next_id: SentenceId,
    next_ordinal: usize,
}

impl Segmenter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one event in. Returns the sentences it closed, in closing order.
    pub fn ingest(&mut self, event: TimedText) -> Result<Vec<Sentence>, TranscriptError> {
        if event.end < event.start {
            return Err(TranscriptError::InvertedSpan { start: event.start, end: event.end });
        }
        if event.text.trim().is_empty() {
            return Err(TranscriptError::EmptyText { start: event.start });
        }
        if let Some(previous) = self.last_start {
            if event.start < previous {
                return Err(TranscriptError::OutOfOrder { start: event.start, previous });
            }
        }
        let mut closed = Vec::new();
        if let Some(last_end) = self.last_end {
            if !self.open.is_empty() && event.start.saturating_sub(last_end) > PAUSE_THRESHOLD_MS {
                closed.extend(self.close());
            }
        }
        self.last_start = Some(event.start);
        self.last_end = Some(self.last_end.map_or(event.end, |e| e.max(event.end)));
        let terminal = text::ends_with_terminal_punctuation(&event.text);
        self.open.push(event);
        if terminal {
            closed.extend(self.close());
        }
        Ok(closed)
    }

    /// Force-closes a sentence that has been idle for [`IDLE_CLOSE_MS`].
    pub fn tick(&mut self, now: u64) -> Option<Sentence> {
        let deadline = self.idle_deadline()?;
        if now >= deadline {
            self.close()
        } else {
            None
        }
    }

    /// When the open sentence will be force-closed, if one is open.
    pub fn idle_deadline(&self) -> Option<u64> {
        if self.open.is_empty() {
            return None;
        }
        self.last_end.map(|e| e + IDLE_CLOSE_MS)
    }

    /// Closes whatever is buffered, e.g. at end of input.
    pub fn flush(&mut self) -> Option<Sentence> {
        self.close()
    }

    pub fn has_open(&self) -> bool {
        !self.open.is_empty()
    }

    fn close(&mut self) -> Option<Sentence> {
        if self.open.is_empty() {
            return None;
        }
        let parts = std::mem::take(&mut self.open);
        let joined: Vec<&str> = parts.iter().map(|p| p.text.as_str()).collect();
        let sentence = Sentence {
            id: self.next_id,
            text: text::normalize_whitespace(&joined.join(" ")),
            start: parts.first().map_or(0, |p| p.start),
            end: parts.iter().map(|p| p.end).max().unwrap_or(0),
            ordinal: self.next_ordinal,
        };
        self.next_id += 1;
        self.next_ordinal += 1;
        Some(sentence)
    }
}

/// A word with the time it was spoken, the input of [`Windower`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedToken {
    pub text: String,
    pub at: u64,
}

/// Slices a timed token stream into fixed capture windows
/// `[k * CAPTURE_WINDOW_MS, (k + 1) * CAPTURE_WINDOW_MS)`. Empty windows
/// produce nothing.
#[derive(Debug, Clone, Default)]
pub struct Windower {
    window: Option<u64>,
    tokens: Vec<TimedToken>,
}

impl Windower {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, token: TimedToken) -> Option<TimedText> {
        let idx = token.at / CAPTURE_WINDOW_MS;
        let emitted = match self.window {
            Some(current) if current != idx => self.emit(),
            _ => None,
        };
        self.window = Some(idx);
        self.tokens.push(token);
        emitted
    }

    /// Emits the current window once the clock has passed its end.
    pub fn tick(&mut self, now: u64) -> Option<TimedText> {
        let current = self.window?;
        if now >= (current + 1) * CAPTURE_WINDOW_MS {
            self.window = None;
            self.emit()
        } else {
            None
        }
    }

    pub fn finish(&mut self) -> Option<TimedText> {
        self.window = None;
        self.emit()
    }

    fn emit(&mut self) -> Option<TimedText> {
        let tokens = std::mem::take(&mut self.tokens);
        let first = tokens.first()?;
        let last = tokens.last()?;
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        Some(TimedText { text: words.join(" "), start: first.at, end: last.at })
    }
}

/// Runs a whole token list through a [`Windower`].
pub fn window_tokens(tokens: impl IntoIterator<Item = TimedToken>) -> Vec<TimedText> {
    let mut windower = Windower::new();
    let mut out: Vec<TimedText> = tokens.into_iter().filter_map(|t| windower.push(t)).collect();
    out.extend(windower.finish());
    out
}

/// Spreads each record's words evenly over its span, as a scripted speaker.
pub fn tokens_from_records(records: &[TimedText]) -> Vec<TimedToken> {
    let mut out = Vec::new();
    for rec in records {
        let words: Vec<&str> = rec.text.split_whitespace().collect();
        let n = words.len() as u64;
        for (i, w) in words.iter().enumerate() {
            let offset = if n > 1 { (rec.end - rec.start) * i as u64 / (n - 1) } else { 0 };
            out.push(TimedToken { text: (*w).to_string(), at: rec.start + offset });
        }
    }
    out
}

/// One trace record: `start_ms<TAB>end_ms<TAB>text`.
pub struct TraceRecord<'a>(pub &'a TimedText);

impl fmt::Display for TraceRecord<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.0.start, self.0.end, text::normalize_whitespace(&self.0.text))
    }
}

pub fn parse_trace_line(line: &str, line_no: usize) -> Result<TimedText, TranscriptError> {
    let bad = |reason: &str| TranscriptError::TraceFormat { line: line_no, reason: reason.to_string() };
    let mut fields = line.splitn(3, '\t');
    let start = fields.next().ok_or_else(|| bad("missing start"))?;
    let end = fields.next().ok_or_else(|| bad("missing end"))?;
    let body = fields.next().ok_or_else(|| bad("missing text"))?;
    if body != body.trim_end() {
        return Err(bad("trailing whitespace"));
    }
    let start: u64 = start.parse().map_err(|_| bad("start is not an integer"))?;
    let end: u64 = end.parse().map_err(|_| bad("end is not an integer"))?;
    TimedText::new(body, start, end).map_err(|e| bad(&e.to_string()))
}

/// Parses a whole trace. Blank lines are skipped.
pub fn parse_trace(input: &str) -> Result<Vec<TimedText>, TranscriptError> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_trace_line(l, i + 1))
        .collect()
}

pub fn read_trace(reader: impl BufRead) -> Result<Vec<TimedText>, TranscriptError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TranscriptError::Io(e.to_string()))?;
        if !line.is_empty() {
            out.push(parse_trace_line(&line, i + 1)?);
        }
    }
    Ok(out)
}

pub fn write_trace(records: &[TimedText]) -> String {
    records.iter().map(|r| format!("{}\n", TraceRecord(r))).collect()
}

/// Source of timed text. The shipped adapters are file and in-memory
/// scripts; a live speech-to-text engine plugs in here.
pub trait TranscriptAdapter {
    fn next_event(&mut self) -> Option<TimedText>;
}

pub struct ScriptedAdapter {
    records: std::vec::IntoIter<TimedText>,
}

impl ScriptedAdapter {
    pub fn new(records: Vec<TimedText>) -> Self {
        Self { records: records.into_iter() }
    }

    pub fn from_trace_file(path: &std::path::Path) -> Result<Self, TranscriptError> {
        let file = std::fs::File::open(path).map_err(|e| TranscriptError::Io(e.to_string()))?;
        Ok(Self::new(read_trace(std::io::BufReader::new(file))?))
    }
}

impl TranscriptAdapter for ScriptedAdapter {
    fn next_event(&mut self) -> Option<TimedText> {
        self.records.next()
    }
}
