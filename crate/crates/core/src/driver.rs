//! Wraps a [`Session`] with its input stages (segmenter, click
//! discrimination) and logs every event it applies. The live runtime and the
//! replay simulator both drive sessions through this type; they differ only
//! in how they schedule generations.

use std::sync::Arc;

use crate::eventlog::{Entry, InputResult, LogEvent, TargetRef};
use crate::llm::{Delivery, GenerationResult};
use crate::prompt::{PromptKind, PromptSet};
use crate::session::{
    Action, Effect, InputNormalizer, KeywordId, KeywordKind, Note, Session, SessionConfig, SessionEvent, Target,
};
use crate::transcript::{Segmenter, Sentence, TimedText, TranscriptError};

/// One line of the notes log: a note at record time or after a revision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteRecord {
    pub t_ms: u64,
    pub note: Note,
    /// Revision this record adds; 1 for the recording itself.
    pub revision: usize,
}

/// Everything logged since the last [`Driver::take_output`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Output {
    pub transcript: Vec<TimedText>,
    pub events: Vec<Entry>,
    pub notes: Vec<NoteRecord>,
}

impl Output {
    pub fn extend(&mut self, other: Output) {
        self.transcript.extend(other.transcript);
        self.events.extend(other.events);
        self.notes.extend(other.notes);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DriveError {
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("{0}")]
    Unresolved(String),
}

pub struct Driver {
    session: Session,
    segmenter: Segmenter,
    normalizer: InputNormalizer,
    out: Output,
    ring_since: Option<u64>,
    ring_spans: Vec<(u64, u64)>,
    latencies: Vec<(PromptKind, u64)>,
}

impl Driver {
    pub fn new(config: SessionConfig, prompts: Arc<PromptSet>) -> Self {
        Self {
            session: Session::new(config, prompts),
            segmenter: Segmenter::new(),
            normalizer: InputNormalizer::new(),
            out: Output::default(),
            ring_since: None,
            ring_spans: Vec::new(),
            latencies: Vec::new(),
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Intervals during which the derivative ring was on screen.
    pub fn ring_spans(&self) -> &[(u64, u64)] {
        &self.ring_spans
    }

    /// Latency of every delivered generation, in delivery order.
    pub fn latencies(&self) -> &[(PromptKind, u64)] {
        &self.latencies
    }

    pub fn take_output(&mut self) -> Output {
        std::mem::take(&mut self.out)
    }

    /// Earliest timer: the segmenter's idle close or a pending click.
    pub fn next_deadline(&self) -> Option<u64> {
        match (self.segmenter.idle_deadline(), self.normalizer.deadline()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Fires every timer due at or before `now`, each at its own deadline.
    pub fn tick(&mut self, now: u64) -> Vec<Effect> {
        self.fire_timers(|d| d <= now)
    }

    fn advance(&mut self, at: u64) -> Vec<Effect> {
        self.fire_timers(|d| d < at)
    }

    fn fire_timers(&mut self, due: impl Fn(u64) -> bool) -> Vec<Effect> {
        let mut fx = Vec::new();
        loop {
            let idle = self.segmenter.idle_deadline().filter(|d| due(*d));
            let click = self.normalizer.deadline().filter(|d| due(*d));
            match (idle, click) {
                (Some(i), c) if c.is_none_or(|c| i <= c) => {
                    if let Some(s) = self.segmenter.tick(i) {
                        fx.extend(self.sentence(i, s));
                    }
                }
                (_, Some(c)) => {
                    if let Some(r) = self.normalizer.tick(c) {
                        fx.extend(self.apply_input(r.at, r.target, r.action));
                    }
                }
                _ => return fx,
            }
        }
    }

    pub fn transcript(&mut self, at: u64, event: TimedText) -> Result<Vec<Effect>, DriveError> {
        let mut fx = self.advance(at);
        let sentences = self.segmenter.ingest(event.clone())?;
        self.out.transcript.push(event);
        for s in sentences {
            fx.extend(self.sentence(at, s));
        }
        Ok(fx)
    }

    /// Closes any open sentence, e.g. when the transcript source ends.
    pub fn end_of_transcript(&mut self, at: u64) -> Vec<Effect> {
        let mut fx = self.advance(at);
        if let Some(s) = self.segmenter.flush() {
            fx.extend(self.sentence(at, s));
        }
        fx
    }

    /// Applies an already-segmented sentence.
    pub fn sentence(&mut self, at: u64, s: Sentence) -> Vec<Effect> {
        self.log(at, LogEvent::Sentence(s.clone()));
        self.apply(at, SessionEvent::Sentence(s))
    }

    pub fn touch(&mut self, at: u64, on: bool) -> Vec<Effect> {
        let mut fx = self.advance(at);
        self.log(at, LogEvent::Touch { on });
        fx.extend(self.apply(at, SessionEvent::Touch { on }));
        fx
    }

    /// A raw press; it becomes a click or double-click once discriminated.
    pub fn press(&mut self, at: u64, target: Target) -> Vec<Effect> {
        let mut fx = self.advance(at);
        for r in self.normalizer.press(target, at) {
            fx.extend(self.apply_input(r.at, r.target, r.action));
        }
        fx
    }

    /// An input the client already discriminated.
    pub fn input(&mut self, at: u64, target: Target, action: Action) -> Vec<Effect> {
        let mut fx = self.advance(at);
        fx.extend(self.apply_input(at, target, action));
        fx
    }

    /// Resolves a script target against what is on screen now.
    pub fn resolve(&self, target: &TargetRef) -> Result<Target, DriveError> {
        let view = self.session.view();
        let find = |pool: &mut dyn Iterator<Item = &crate::session::KeywordView>, w: &str| {
            let pool: Vec<_> = pool.collect();
            pool.iter()
                .find(|k| k.word == w)
                .or_else(|| pool.iter().find(|k| k.word.eq_ignore_ascii_case(w)))
                .map(|k| k.id)
        };
        match target {
            TargetRef::Exact(t) => Ok(t.clone()),
            TargetRef::KeywordWord(w) => find(&mut view.queue.keywords.iter().chain(view.customized.iter()), w)
                .map(Target::Keyword)
                .ok_or_else(|| DriveError::Unresolved(format!("no keyword {w:?} on screen"))),
            TargetRef::ChipWord(w) => find(&mut view.selection.iter(), w)
                .map(Target::Chip)
                .ok_or_else(|| DriveError::Unresolved(format!("no selected keyword {w:?}"))),
        }
    }

    /// Hands a finished generation to the session. `accepted` is the lane
    /// book's verdict; refused results are only logged.
    pub fn delivered(&mut self, at: u64, delivery: Delivery, accepted: bool) -> Vec<Effect> {
        let mut fx = self.advance(at);
        if !accepted {
            let (lane, seq) = (delivery.lane(), delivery.seq());
            let kind = match &delivery {
                Delivery::Completed(r) => r.kind,
                Delivery::Failed { kind, .. } => *kind,
            };
            self.log(at, LogEvent::Dropped { lane, seq, kind });
            return fx;
        }
        match delivery {
            Delivery::Completed(r) => fx.extend(self.completed(at, r)),
            Delivery::Failed { lane, seq, kind, error } => {
                self.log(at, LogEvent::GenerationFailed { lane, seq, kind, error: error.clone() });
                fx.extend(self.apply(at, SessionEvent::Failed { lane, seq, kind, error }));
            }
        }
        fx
    }

    fn completed(&mut self, at: u64, r: GenerationResult) -> Vec<Effect> {
        self.latencies.push((r.kind, r.latency_ms));
        self.log(at, LogEvent::Generation(r.clone()));
        self.apply(at, SessionEvent::Completed(r))
    }

    /// Re-applies one logged event. Derived lines (drops, note records) are
    /// skipped since applying the rest regenerates them.
    pub fn reapply(&mut self, entry: &Entry) -> Result<Vec<Effect>, DriveError> {
        let at = entry.t_ms;
        Ok(match &entry.event {
            LogEvent::Sentence(s) => {
                let mut fx = self.advance(at);
                fx.extend(self.sentence(at, s.clone()));
                fx
            }
            LogEvent::Touch { on } => self.touch(at, *on),
            LogEvent::Press { target } => {
                let target = self.resolve(target)?;
                self.press(at, target)
            }
            LogEvent::Input { target, action, .. } => {
                let target = self.resolve(target)?;
                self.input(at, target, *action)
            }
            LogEvent::Generation(r) => {
                let mut fx = self.advance(at);
                fx.extend(self.completed(at, r.clone()));
                fx
            }
            LogEvent::GenerationFailed { lane, seq, kind, error } => {
                let d = Delivery::Failed { lane: *lane, seq: *seq, kind: *kind, error: error.clone() };
                self.delivered(at, d, true)
            }
            LogEvent::Dropped { .. } | LogEvent::Recorded { .. } | LogEvent::Revised { .. } => Vec::new(),
        })
    }

    /// Closes the bookkeeping at the end of a run.
    pub fn finish(&mut self, at: u64) {
        if let Some(since) = self.ring_since.take() {
            self.ring_spans.push((since, at.max(since)));
        }
    }

    fn apply_input(&mut self, at: u64, target: Target, action: Action) -> Vec<Effect> {
        let (keyword, word, kind) = self.describe(&target);
        let mark = self.out.events.len();
        let fx = self.apply(at, SessionEvent::Input { target: target.clone(), action });
        let result = if fx.iter().any(|e| matches!(e, Effect::Rejected { .. })) {
            InputResult::Rejected
        } else {
            InputResult::Ok
        };
        // The input line goes before anything the input caused.
        let line =
            Entry::new(at, LogEvent::Input {
            target: TargetRef::Exact(target),
            action,
            keyword,
            word,
            kind,
            result: Some(result),
        });
        self.out.events.insert(mark, line);
        fx
    }

    fn describe(&self, target: &Target) -> (Option<KeywordId>, Option<String>, Option<KeywordKind>) {
        let id = match target {
            Target::Keyword(id) | Target::Chip(id) => Some(*id),
            Target::RingSlot(slot) => self.session.ring_slot(*slot),
            _ => None,
        };
        match id.and_then(|id| self.session.keyword(id).map(|k| (id, k))) {
            Some((id, k)) => (Some(id), Some(k.word.clone()), Some(k.kind)),
            None => (None, None, None),
        }
    }

    fn apply(&mut self, at: u64, event: SessionEvent) -> Vec<Effect> {
        let fx = self.session.apply(at, event);
        for e in &fx {
            match e {
                Effect::Recorded(note) => {
                    self.log(at, LogEvent::Recorded { note: note.id, kind: note.kind });
                    self.out.notes.push(NoteRecord { t_ms: at, note: note.clone(), revision: 1 });
                }
                Effect::Revised(note) => {
                    let revision = note.revisions.len();
                    self.log(at, LogEvent::Revised { note: note.id, revision });
                    self.out.notes.push(NoteRecord { t_ms: at, note: note.clone(), revision });
                }
                _ => {}
            }
        }
        self.track_ring(at);
        fx
    }

    fn track_ring(&mut self, at: u64) {
        match (self.session.ring_displayed(), self.ring_since) {
            (true, None) => self.ring_since = Some(at),
            (false, Some(since)) => {
                self.ring_spans.push((since, at));
                self.ring_since = None;
            }
            _ => {}
        }
    }

    fn log(&mut self, at: u64, event: LogEvent) {
        self.out.events.push(Entry::new(at, event));
    }
}
