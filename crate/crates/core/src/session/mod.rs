//! The interaction state machine. [`Session::apply`] is the only transition
//! entry point; it is pure, so replaying the same events from the same start
//! state reproduces the same state and effects.

mod input;
mod note;
mod view;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llm::{Basis, GenerationError, GenerationRequest, GenerationResult, Lane, Seq};
use crate::prompt::{CustomizedChoice, CustomizedKeyword, CustomizedRole, KeywordList, PromptKind, PromptSet};
use crate::transcript::{Sentence, SentenceId, Transcript};

pub use input::{InputNormalizer, Resolved, DOUBLE_CLICK_MS};
pub use note::{CandidateSnapshot, Note, NoteId, NoteKeyword, NoteKind, Revision, RevisionSource};
pub use view::{CandidatesView, DetailView, KeywordView, NoteSummary, QueueView, RingView, View};

pub type KeywordId = u64;

/// Derivative slots around the origin in the ring.
pub const RING_DERIVATIVES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordKind {
    Context,
    Customized,
    Derivative,
}

impl KeywordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KeywordKind::Context => "context",
            KeywordKind::Customized => "customized",
            KeywordKind::Derivative => "derivative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "context" => Some(KeywordKind::Context),
            "customized" => Some(KeywordKind::Customized),
            "derivative" => Some(KeywordKind::Derivative),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum KeywordSource {
    Sentence { id: SentenceId },
    Origin { id: KeywordId },
    Config { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub id: KeywordId,
    pub word: String,
    pub kind: KeywordKind,
    pub source: KeywordSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Hidden,
    Shown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    KeywordBrowse,
    Selecting,
    DerivativeView,
    NotesReview,
    NoteDetail,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::KeywordBrowse => "keyword_browse",
            Mode::Selecting => "selecting",
            Mode::DerivativeView => "derivative_view",
            Mode::NotesReview => "notes_review",
            Mode::NoteDetail => "note_detail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Queue,
    Ring,
    Refinement,
}

impl Surface {
    pub fn as_str(self) -> &'static str {
        match self {
            Surface::Queue => "queue",
            Surface::Ring => "ring",
            Surface::Refinement => "refinement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "queue" => Some(Surface::Queue),
            "ring" => Some(Surface::Ring),
            "refinement" => Some(Surface::Refinement),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Prev,
    Next,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Prev => "prev",
            Direction::Next => "next",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prev" => Some(Direction::Prev),
            "next" => Some(Direction::Next),
            _ => None,
        }
    }
}

/// An on-screen element the user can point at.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A context keyword in the queue or a customized keyword.
    Keyword(KeywordId),
    /// A selected keyword in the selection column.
    Chip(KeywordId),
    /// 0 is the ring's origin, 1..=4 its derivative slots.
    RingSlot(usize),
    Candidate(usize),
    Arrow { surface: Surface, dir: Direction },
    NotesButton,
    NoteItem(NoteId),
    RefineCandidate(usize),
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Click,
    DoubleClick,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Click => "click",
            Action::DoubleClick => "double_click",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "click" => Some(Action::Click),
            "double_click" => Some(Action::DoubleClick),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionEvent {
    Sentence(Sentence),
    Completed(GenerationResult),
    Failed { lane: Lane, seq: Seq, kind: PromptKind, error: GenerationError },
    Touch { on: bool },
    Input { target: Target, action: Action },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    Start(GenerationRequest),
    Cancel { lane: Lane, below: Seq },
    Recorded(Note),
    /// Full note after a new revision.
    Revised(Note),
    /// The event was refused; state is unchanged.
    Rejected { reason: String },
    Diagnostic { code: String, message: String },
}

impl Effect {
    fn rejected(reason: impl Into<String>) -> Self {
        Effect::Rejected { reason: reason.into() }
    }

    fn diagnostic(code: &str, message: impl Into<String>) -> Self {
        Effect::Diagnostic { code: code.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub customized: Vec<CustomizedKeyword>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { customized: CustomizedKeyword::defaults() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueGroup {
    pub sentence: SentenceId,
    pub keywords: Vec<KeywordId>,
}

/// Context keywords, one group per sentence and one group per page.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordQueue {
    pub groups: Vec<QueueGroup>,
    pub page: usize,
}

impl KeywordQueue {
    pub fn visible(&self) -> Option<&QueueGroup> {
        self.groups.get(self.page)
    }

    pub fn latest(&self) -> Option<SentenceId> {
        self.groups.last().map(|g| g.sentence)
    }

    fn on_newest_page(&self) -> bool {
        self.groups.is_empty() || self.page + 1 == self.groups.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Candidates {
    None,
    Pending { seq: Seq, basis: Vec<KeywordId> },
    Shown { seq: Seq, basis: Vec<KeywordId>, sentences: Vec<String> },
    Failed { seq: Seq, basis: Vec<KeywordId>, code: String },
}

impl Candidates {
    pub fn basis(&self) -> Option<&[KeywordId]> {
        match self {
            Candidates::None => None,
            Candidates::Pending { basis, .. } | Candidates::Shown { basis, .. } | Candidates::Failed { basis, .. } => {
                Some(basis)
            }
        }
    }

    pub fn seq(&self) -> Option<Seq> {
        match self {
            Candidates::None => None,
            Candidates::Pending { seq, .. } | Candidates::Shown { seq, .. } | Candidates::Failed { seq, .. } => {
                Some(*seq)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingDerive {
    pub seq: Seq,
    /// First slot this request fills.
    pub offset: usize,
    /// Start a second exclusive request into slots 2..4 when this one ends.
    pub followup: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingPage {
    pub slots: [Option<KeywordId>; RING_DERIVATIVES],
    pub pending: Vec<PendingDerive>,
    /// Words the derivations of this page were told to avoid.
    pub displayed: KeywordList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ring {
    pub origin: KeywordId,
    pub pages: Vec<RingPage>,
    pub page: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RefinePage {
    Pending { seq: Seq },
    Shown { seq: Seq, sentences: Vec<String> },
    Failed { seq: Seq, code: String },
}

impl RefinePage {
    fn seq(&self) -> Seq {
        match self {
            RefinePage::Pending { seq } | RefinePage::Shown { seq, .. } | RefinePage::Failed { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detail {
    pub note: NoteId,
    pub pages: Vec<RefinePage>,
    pub page: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "surface", rename_all = "snake_case")]
pub enum NotesSurface {
    List,
    Detail(Detail),
}

/// Bookkeeping for the note being composed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub first_selection_ms: Option<u64>,
    pub last_selection_ms: Option<u64>,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub visibility: Visibility,
    pub keywords: BTreeMap<KeywordId, Keyword>,
    pub customized: Vec<KeywordId>,
    pub queue: KeywordQueue,
    pub selection: Vec<KeywordId>,
    pub composition: Composition,
    pub candidates: Candidates,
    pub ring: Option<Ring>,
    pub notes_view: Option<NotesSurface>,
    pub notes: Vec<Note>,
    pub transcript: Transcript,
    /// Extraction requests in flight, by the sentence they were made for.
    pub extracting: BTreeMap<Seq, SentenceId>,
    /// Set after an authentication failure; no further generations start.
    pub halted: Option<String>,
    pub next_keyword: KeywordId,
    pub next_seq: Seq,
    pub next_note: NoteId,
}

pub struct Session {
    prompts: Arc<PromptSet>,
    config: SessionConfig,
    state: SessionState,
}

impl Session {
    pub fn new(config: SessionConfig, prompts: Arc<PromptSet>) -> Self {
        let mut keywords = BTreeMap::new();
        let mut customized = Vec::new();
        for (index, ck) in config.customized.iter().enumerate() {
            let id = index as KeywordId;
            keywords.insert(
                id,
                Keyword {
                    id,
                    word: ck.word.clone(),
                    kind: KeywordKind::Customized,
                    source: KeywordSource::Config { index },
                },
            );
            customized.push(id);
        }
        let state = SessionState {
            visibility: Visibility::Hidden,
            next_keyword: keywords.len() as KeywordId,
            keywords,
            customized,
            queue: KeywordQueue::default(),
            selection: Vec::new(),
            composition: Composition::default(),
            candidates: Candidates::None,
            ring: None,
            notes_view: None,
            notes: Vec::new(),
            transcript: Transcript::default(),
            extracting: BTreeMap::new(),
            halted: None,
            next_seq: 1,
            next_note: 1,
        };
        Self { prompts, config, state }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn prompts(&self) -> &Arc<PromptSet> {
        &self.prompts
    }

    pub fn notes(&self) -> &[Note] {
        &self.state.notes
    }

    pub fn keyword(&self, id: KeywordId) -> Option<&Keyword> {
        self.state.keywords.get(&id)
    }

    pub fn mode(&self) -> Mode {
        let s = &self.state;
        match (&s.notes_view, &s.ring) {
            (Some(NotesSurface::List), _) => Mode::NotesReview,
            (Some(NotesSurface::Detail(_)), _) => Mode::NoteDetail,
            (None, Some(_)) => Mode::DerivativeView,
            (None, None) if !s.selection.is_empty() => Mode::Selecting,
            (None, None) => Mode::KeywordBrowse,
        }
    }

    /// Whether the derivative ring is on screen.
    pub fn ring_displayed(&self) -> bool {
        self.state.visibility == Visibility::Shown && self.mode() == Mode::DerivativeView
    }

    /// The dispatch entry point. `at` is the session clock in ms.
    pub fn apply(&mut self, at: u64, event: SessionEvent) -> Vec<Effect> {
        let mut fx = Vec::new();
        match event {
            SessionEvent::Sentence(sentence) => self.on_sentence(sentence, &mut fx),
            SessionEvent::Completed(result) => self.on_completed(result, &mut fx),
            SessionEvent::Failed { lane, seq, kind, error } => self.on_failed(lane, seq, kind, error, &mut fx),
            SessionEvent::Touch { on } => {
                self.state.visibility = if on { Visibility::Shown } else { Visibility::Hidden };
            }
            SessionEvent::Input { target, action } => self.on_input(at, target, action, &mut fx),
        }
        fx
    }

    fn on_sentence(&mut self, sentence: Sentence, fx: &mut Vec<Effect>) {
        self.state.transcript.push(sentence.clone());
        let prompt = self.prompts.render_extraction(&sentence);
        let id = sentence.id;
        if let Some(seq) =
            self.request(Lane::Extraction, PromptKind::Extraction, prompt, Basis::Extraction { sentence }, fx)
        {
            self.state.extracting.insert(seq, id);
        }
    }

    fn on_completed(&mut self, r: GenerationResult, fx: &mut Vec<Effect>) {
        match r.lane {
            Lane::Extraction => match self.state.extracting.remove(&r.seq) {
                Some(sentence) => self.add_context_keywords(sentence, &r.items),
                None => fx.push(stale(&r)),
            },
            Lane::Organize => match &self.state.candidates {
                Candidates::Pending { seq, basis } if *seq == r.seq => {
                    self.state.candidates = Candidates::Shown { seq: r.seq, basis: basis.clone(), sentences: r.items };
                }
                _ => fx.push(stale(&r)),
            },
            Lane::Derive => {
                if !self.fill_ring(r.seq, &r.items, fx) {
                    fx.push(stale(&r));
                }
            }
            Lane::Refine => match self.refine_page_mut(r.seq) {
                Some(page) => *page = RefinePage::Shown { seq: r.seq, sentences: r.items },
                None => fx.push(stale(&r)),
            },
        }
    }

    fn on_failed(&mut self, lane: Lane, seq: Seq, kind: PromptKind, error: GenerationError, fx: &mut Vec<Effect>) {
        fx.push(Effect::diagnostic(error.code(), format!("{kind} generation {seq}: {error}")));
        if error.is_fatal() && self.state.halted.is_none() {
            self.state.halted = Some(error.to_string());
        }
        let code = error.code().to_string();
        match lane {
            Lane::Extraction => {
                self.state.extracting.remove(&seq);
            }
            Lane::Organize => {
                if let Candidates::Pending { seq: s, basis } = &self.state.candidates {
                    if *s == seq {
                        self.state.candidates = Candidates::Failed { seq, basis: basis.clone(), code };
                    }
                }
            }
            Lane::Derive => {
                self.fill_ring(seq, &[], fx);
            }
            Lane::Refine => {
                if let Some(page) = self.refine_page_mut(seq) {
                    *page = RefinePage::Failed { seq, code };
                }
            }
        }
    }

    fn add_context_keywords(&mut self, sentence: SentenceId, words: &[String]) {
        let words = KeywordList::new(words.iter().cloned());
        if words.is_empty() {
            return;
        }
        let follow = self.state.queue.on_newest_page();
        let ids = words
            .words()
            .iter()
            .map(|w| self.new_keyword(w.clone(), KeywordKind::Context, KeywordSource::Sentence { id: sentence }))
            .collect();
        let queue = &mut self.state.queue;
        queue.groups.push(QueueGroup { sentence, keywords: ids });
        if follow {
            queue.page = queue.groups.len() - 1;
        }
    }

    fn new_keyword(&mut self, word: String, kind: KeywordKind, source: KeywordSource) -> KeywordId {
        let id = self.state.next_keyword;
        self.state.next_keyword += 1;
        self.state.keywords.insert(id, Keyword { id, word, kind, source });
        id
    }

    /// Allocates a seq and emits the start effect, unless generations are halted.
    fn request(
        &mut self,
        lane: Lane,
        kind: PromptKind,
        prompt: crate::prompt::PromptText,
        basis: Basis,
        fx: &mut Vec<Effect>,
    ) -> Option<Seq> {
        if self.state.halted.is_some() {
            fx.push(Effect::diagnostic("halted", format!("{kind} generation not started")));
            return None;
        }
        let seq = self.state.next_seq;
        self.state.next_seq += 1;
        fx.push(Effect::Start(GenerationRequest { seq, lane, kind, prompt, basis }));
        Some(seq)
    }

    fn cancel_all(&self, lane: Lane, fx: &mut Vec<Effect>) {
        fx.push(Effect::Cancel { lane, below: self.state.next_seq });
    }

    fn on_input(&mut self, at: u64, target: Target, action: Action, fx: &mut Vec<Effect>) {
        if self.state.visibility == Visibility::Hidden {
            fx.push(Effect::rejected("display is hidden"));
            return;
        }
        if self.state.notes_view.is_some() {
            self.on_notes_input(at, target, fx);
        } else {
            self.on_main_input(at, target, action, fx);
        }
    }

    fn on_main_input(&mut self, at: u64, target: Target, action: Action, fx: &mut Vec<Effect>) {
        match target {
            Target::Keyword(id) => {
                let Some(kind) = self.on_screen_keyword(id) else {
                    fx.push(Effect::rejected(format!("keyword {id} is not on screen")));
                    return;
                };
                match (action, kind) {
                    (Action::DoubleClick, KeywordKind::Context) => {
                        let added = self.select(id);
                        self.step(at, added);
                        if added {
                            self.selection_changed(fx);
                        }
                        self.open_ring(id, fx);
                    }
                    _ => {
                        let added = self.toggle(id);
                        self.step(at, added);
                        self.selection_changed(fx);
                    }
                }
            }
            Target::Chip(id) => {
                if !self.state.selection.contains(&id) {
                    fx.push(Effect::rejected(format!("keyword {id} is not selected")));
                    return;
                }
                match action {
                    Action::Click => {
                        self.toggle(id);
                        self.step(at, false);
                        self.selection_changed(fx);
                    }
                    Action::DoubleClick => {
                        self.step(at, false);
                        self.record_keywords(at, fx);
                    }
                }
            }
            Target::RingSlot(slot) => {
                let Some(id) = self.ring_slot(slot) else {
                    fx.push(Effect::rejected(format!("ring slot {slot} is empty")));
                    return;
                };
                match action {
                    Action::Click => {
                        let added = self.toggle(id);
                        self.step(at, added);
                        self.close_ring(fx);
                        self.selection_changed(fx);
                    }
                    Action::DoubleClick if slot == 0 => {
                        fx.push(Effect::rejected("the ring origin is already derived"));
                    }
                    Action::DoubleClick => {
                        self.step(at, false);
                        self.open_ring(id, fx);
                    }
                }
            }
            Target::Candidate(index) => match action {
                Action::Click => self.record_sentence(at, index, fx),
                Action::DoubleClick => {
                    if self.state.selection.is_empty() {
                        fx.push(Effect::rejected("nothing selected"));
                        return;
                    }
                    self.step(at, false);
                    self.record_keywords(at, fx);
                }
            },
            Target::Arrow { surface: Surface::Queue, dir } => {
                let q = &mut self.state.queue;
                match dir {
                    Direction::Prev => q.page = q.page.saturating_sub(1),
                    Direction::Next if q.page + 1 < q.groups.len() => q.page += 1,
                    Direction::Next => {}
                }
            }
            Target::Arrow { surface: Surface::Ring, dir } => self.page_ring(dir, fx),
            Target::Arrow { surface: Surface::Refinement, .. } => {
                fx.push(Effect::rejected("refinement candidates are not on screen"));
            }
            Target::NotesButton => self.state.notes_view = Some(NotesSurface::List),
            Target::Back => {
                if self.state.ring.is_some() {
                    self.close_ring(fx);
                } else {
                    fx.push(Effect::rejected("nothing to go back from"));
                }
            }
            Target::NoteItem(_) | Target::RefineCandidate(_) => {
                fx.push(Effect::rejected("notes are not open"));
            }
        }
    }

    fn on_notes_input(&mut self, at: u64, target: Target, fx: &mut Vec<Effect>) {
        let in_detail = matches!(self.state.notes_view, Some(NotesSurface::Detail(_)));
        match target {
            Target::NotesButton => {
                if in_detail {
                    self.cancel_all(Lane::Refine, fx);
                }
                self.state.notes_view = None;
            }
            Target::Back => {
                if in_detail {
                    self.cancel_all(Lane::Refine, fx);
                    self.state.notes_view = Some(NotesSurface::List);
                } else {
                    self.state.notes_view = None;
                }
            }
            Target::NoteItem(id) if !in_detail => {
                if !self.state.notes.iter().any(|n| n.id == id) {
                    fx.push(Effect::rejected(format!("no note {id}")));
                    return;
                }
                let page = self.refine_request(id, fx);
                self.state.notes_view = Some(NotesSurface::Detail(Detail { note: id, pages: vec![page], page: 0 }));
            }
            Target::Arrow { surface: Surface::Refinement, dir } if in_detail => self.page_refinement(dir, fx),
            Target::RefineCandidate(index) if in_detail => self.refine(at, index, fx),
            _ => fx.push(Effect::rejected("not on screen while reviewing notes")),
        }
    }

    /// Kind of a keyword the user can currently point at in the queue or
    /// the customized column.
    fn on_screen_keyword(&self, id: KeywordId) -> Option<KeywordKind> {
        let kw = self.state.keywords.get(&id)?;
        match kw.kind {
            KeywordKind::Customized => Some(kw.kind),
            KeywordKind::Context => {
                self.state.queue.visible().filter(|g| g.keywords.contains(&id)).map(|_| kw.kind)
            }
            KeywordKind::Derivative => None,
        }
    }

    /// Keyword in ring slot `slot`, 0 being the origin.
    pub fn ring_slot(&self, slot: usize) -> Option<KeywordId> {
        let ring = self.state.ring.as_ref()?;
        match slot {
            0 => Some(ring.origin),
            n if n <= RING_DERIVATIVES => ring.pages[ring.page].slots[n - 1],
            _ => None,
        }
    }

    /// Returns whether `id` was added.
    fn select(&mut self, id: KeywordId) -> bool {
        if self.state.selection.contains(&id) {
            false
        } else {
            self.state.selection.push(id);
            true
        }
    }

    fn toggle(&mut self, id: KeywordId) -> bool {
        if let Some(pos) = self.state.selection.iter().position(|k| *k == id) {
            self.state.selection.remove(pos);
            false
        } else {
            self.state.selection.push(id);
            true
        }
    }

    /// Counts one composing step. A composition starts at its first
    /// selection and ends when the selection empties or a note is recorded.
    fn step(&mut self, at: u64, added: bool) {
        let c = &mut self.state.composition;
        if added {
            c.first_selection_ms.get_or_insert(at);
            c.last_selection_ms = Some(at);
        }
        if c.first_selection_ms.is_some() {
            c.steps += 1;
        }
        if self.state.selection.is_empty() {
            self.state.composition = Composition::default();
        }
    }

    /// Regenerates candidates for the current selection, superseding
    /// whatever organize request was outstanding.
    fn selection_changed(&mut self, fx: &mut Vec<Effect>) {
        if self.state.selection.is_empty() {
            self.cancel_all(Lane::Organize, fx);
            self.state.candidates = Candidates::None;
            return;
        }
        let basis = self.state.selection.clone();
        let (keywords, choice) = self.organize_inputs(basis.iter().map(|id| self.state.keywords[id].word.clone()));
        let context = self.state.transcript.window(None, crate::prompt::CONTEXT_SENTENCES);
        let prompt = self.prompts.render_organize(&keywords, &choice, context);
        self.cancel_all(Lane::Organize, fx);
        self.state.candidates =
            match self.request(Lane::Organize, PromptKind::Organize, prompt, Basis::Organize { keywords, choice }, fx)
            {
                Some(seq) => Candidates::Pending { seq, basis },
                None => Candidates::Failed { seq: 0, basis, code: "halted".into() },
            };
    }

    /// Splits selected words into containment keywords and the question form.
    fn organize_inputs(&self, words: impl Iterator<Item = String>) -> (Vec<String>, CustomizedChoice) {
        let mut keywords = Vec::new();
        let mut choice = CustomizedChoice {
            configured_question_words: self
                .config
                .customized
                .iter()
                .filter(|c| c.role() == CustomizedRole::QuestionWord)
                .map(|c| c.word.clone())
                .collect(),
            ..CustomizedChoice::default()
        };
        for word in words {
            let is_customized = self.config.customized.iter().any(|c| c.word == word);
            match CustomizedKeyword::new(word.clone()).role() {
                CustomizedRole::QuestionWord if is_customized => choice.question_words.push(word),
                CustomizedRole::QuestionMark if is_customized => choice.question_mark = true,
                _ => keywords.push(word),
            }
        }
        (keywords, choice)
    }

    fn displayed_words(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .state
            .queue
            .visible()
            .map(|g| g.keywords.iter().map(|id| self.state.keywords[id].word.clone()).collect())
            .unwrap_or_default();
        if let Some(ring) = &self.state.ring {
            words.push(self.state.keywords[&ring.origin].word.clone());
            for page in &ring.pages {
                words.extend(page.slots.iter().flatten().map(|id| self.state.keywords[id].word.clone()));
            }
        }
        words
    }

    fn open_ring(&mut self, origin: KeywordId, fx: &mut Vec<Effect>) {
        let displayed = KeywordList::new(self.displayed_words());
        fx.push(Effect::Cancel { lane: Lane::Derive, below: self.state.next_seq });
        let page = self.derive_page(origin, displayed, fx);
        self.state.ring = Some(Ring { origin, pages: vec![page], page: 0 });
    }

    fn close_ring(&mut self, fx: &mut Vec<Effect>) {
        if self.state.ring.take().is_some() {
            self.cancel_all(Lane::Derive, fx);
        }
    }

    /// A context origin gets two contextual and two exclusive derivatives
    /// at once; a derivative origin gets two exclusive requests in sequence
    /// so the second can avoid the first's words.
    fn derive_page(&mut self, origin: KeywordId, displayed: KeywordList, fx: &mut Vec<Effect>) -> RingPage {
        let kw = self.state.keywords[&origin].clone();
        let mut pending = Vec::new();
        if kw.kind == KeywordKind::Derivative {
            if let Some(seq) = self.derive_request(&kw.word, PromptKind::DeriveExclusive, &displayed, fx) {
                pending.push(PendingDerive { seq, offset: 0, followup: true });
            }
        } else {
            for (kind, offset) in [(PromptKind::DeriveContextual, 0), (PromptKind::DeriveExclusive, 2)] {
                if let Some(seq) = self.derive_request(&kw.word, kind, &displayed, fx) {
                    pending.push(PendingDerive { seq, offset, followup: false });
                }
            }
        }
        RingPage { slots: [None; RING_DERIVATIVES], pending, displayed }
    }

    fn derive_request(
        &mut self,
        origin: &str,
        kind: PromptKind,
        displayed: &KeywordList,
        fx: &mut Vec<Effect>,
    ) -> Option<Seq> {
        let prompt = match kind {
            PromptKind::DeriveContextual => {
                let context = self.state.transcript.window(None, crate::prompt::CONTEXT_SENTENCES);
                self.prompts.render_derive_contextual(origin, displayed, context)
            }
            _ => self.prompts.render_derive_exclusive(origin, displayed),
        };
        let basis = Basis::Derive { origin: origin.to_string(), displayed: displayed.clone() };
        self.request(Lane::Derive, kind, prompt, basis, fx)
    }

    /// Places derived words into the page waiting on `seq`. Returns false if
    /// no page is waiting on it.
    fn fill_ring(&mut self, seq: Seq, items: &[String], fx: &mut Vec<Effect>) -> bool {
        let Some(ring) = &self.state.ring else { return false };
        let origin = ring.origin;
        let Some((p, idx)) = ring
            .pages
            .iter()
            .enumerate()
            .find_map(|(p, page)| page.pending.iter().position(|d| d.seq == seq).map(|i| (p, i)))
        else {
            return false;
        };
        let mut taken: BTreeSet<String> = BTreeSet::new();
        taken.insert(self.state.keywords[&origin].word.to_lowercase());
        for page in &ring.pages {
            for id in page.slots.iter().flatten() {
                taken.insert(self.state.keywords[id].word.to_lowercase());
            }
        }
        let pending = self.state.ring.as_mut().unwrap().pages[p].pending.remove(idx);
        let mut placed = Vec::new();
        for word in items.iter().map(|w| w.to_lowercase()) {
            if placed.len() == crate::prompt::DERIVED_PER_REQUEST || pending.offset + placed.len() >= RING_DERIVATIVES {
                break;
            }
            if !taken.insert(word.clone()) {
                continue;
            }
            let id = self.new_keyword(word.clone(), KeywordKind::Derivative, KeywordSource::Origin { id: origin });
            placed.push((id, word));
        }
        let page = &mut self.state.ring.as_mut().unwrap().pages[p];
        for (i, (id, _)) in placed.iter().enumerate() {
            page.slots[pending.offset + i] = Some(*id);
        }
        if pending.followup {
            let mut displayed: Vec<String> = page.displayed.words().to_vec();
            displayed.extend(placed.into_iter().map(|(_, w)| w));
            let displayed = KeywordList::new(displayed);
            let word = self.state.keywords[&origin].word.clone();
            if let Some(seq) = self.derive_request(&word, PromptKind::DeriveExclusive, &displayed, fx) {
                let page = &mut self.state.ring.as_mut().unwrap().pages[p];
                page.pending.push(PendingDerive { seq, offset: 2, followup: false });
            }
        }
        true
    }

    fn page_ring(&mut self, dir: Direction, fx: &mut Vec<Effect>) {
        let Some(ring) = &mut self.state.ring else {
            fx.push(Effect::rejected("no derivative ring open"));
            return;
        };
        match dir {
            Direction::Prev => ring.page = ring.page.saturating_sub(1),
            Direction::Next if ring.page + 1 < ring.pages.len() => ring.page += 1,
            Direction::Next if !ring.pages[ring.page].pending.is_empty() => {}
            Direction::Next => {
                let origin = ring.origin;
                let displayed = KeywordList::new(self.displayed_words());
                let page = self.derive_page(origin, displayed, fx);
                let ring = self.state.ring.as_mut().unwrap();
                ring.pages.push(page);
                ring.page = ring.pages.len() - 1;
            }
        }
    }

    fn record_keywords(&mut self, at: u64, fx: &mut Vec<Effect>) {
        if self.state.selection.is_empty() {
            fx.push(Effect::rejected("nothing selected"));
            return;
        }
        let text = self
            .state
            .selection
            .iter()
            .map(|id| self.state.keywords[id].word.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        let shown = match &self.state.candidates {
            Candidates::Shown { seq, sentences, .. } => Some(CandidateSnapshot { seq: *seq, sentences: sentences.clone() }),
            _ => None,
        };
        self.record(at, NoteKind::Keywords, text, shown, None, fx);
    }

    fn record_sentence(&mut self, at: u64, index: usize, fx: &mut Vec<Effect>) {
        let (seq, sentence, sentences) = match &self.state.candidates {
            Candidates::Shown { seq, sentences, .. } => match sentences.get(index) {
                Some(s) => (*seq, s.clone(), sentences.clone()),
                None => {
                    fx.push(Effect::rejected(format!("no candidate {index}")));
                    return;
                }
            },
            Candidates::Pending { .. } => {
                fx.push(Effect::rejected("candidates are being regenerated"));
                return;
            }
            _ => {
                fx.push(Effect::rejected("no candidates shown"));
                return;
            }
        };
        self.step(at, false);
        self.record(at, NoteKind::Sentence, sentence, Some(CandidateSnapshot { seq, sentences }), Some(index), fx);
    }

    fn record(
        &mut self,
        at: u64,
        kind: NoteKind,
        text: String,
        candidates_shown: Option<CandidateSnapshot>,
        chosen: Option<usize>,
        fx: &mut Vec<Effect>,
    ) {
        let selection: Vec<NoteKeyword> = self
            .state
            .selection
            .iter()
            .map(|id| {
                let k = &self.state.keywords[id];
                NoteKeyword { id: k.id, word: k.word.clone(), kind: k.kind }
            })
            .collect();
        let sources: BTreeSet<SentenceId> = self.state.selection.iter().filter_map(|id| self.root_sentence(*id)).collect();
        let transcripts = sources.iter().filter_map(|id| self.state.transcript.get(*id).cloned()).collect();
        let c = std::mem::take(&mut self.state.composition);
        let id = self.state.next_note;
        self.state.next_note += 1;
        let note = Note {
            id,
            kind,
            text: text.clone(),
            selection,
            candidates_shown,
            chosen,
            transcripts,
            first_selection_ms: c.first_selection_ms.unwrap_or(at),
            last_selection_ms: c.last_selection_ms.unwrap_or(at),
            recorded_ms: at,
            step_count: c.steps,
            context_upto: self.state.transcript.last().map(|s| s.id),
            revisions: vec![Revision { text, at_ms: at, source: RevisionSource::Recorded }],
        };
        self.state.notes.push(note.clone());
        self.state.selection.clear();
        self.state.candidates = Candidates::None;
        self.cancel_all(Lane::Organize, fx);
        self.close_ring(fx);
        fx.push(Effect::Recorded(note));
    }

    /// The sentence a context keyword came from, following derivative
    /// origins back to it.
    fn root_sentence(&self, mut id: KeywordId) -> Option<SentenceId> {
        loop {
            let kw = self.state.keywords.get(&id)?;
            match kw.source {
                KeywordSource::Sentence { id } => return Some(id),
                KeywordSource::Origin { id: origin } => id = origin,
                KeywordSource::Config { .. } => return None,
            }
        }
    }

    fn refine_request(&mut self, note_id: NoteId, fx: &mut Vec<Effect>) -> RefinePage {
        let note = self.state.notes.iter().find(|n| n.id == note_id).expect("note exists").clone();
        let (keywords, choice) = self.organize_inputs(note.words().into_iter());
        let context = self.state.transcript.window(note.context_upto, crate::prompt::CONTEXT_SENTENCES);
        let prompt = self.prompts.render_organize(&keywords, &choice, context);
        self.cancel_all(Lane::Refine, fx);
        match self.request(Lane::Refine, PromptKind::Organize, prompt, Basis::Organize { keywords, choice }, fx) {
            Some(seq) => RefinePage::Pending { seq },
            None => RefinePage::Failed { seq: 0, code: "halted".into() },
        }
    }

    fn detail_mut(&mut self) -> Option<&mut Detail> {
        match &mut self.state.notes_view {
            Some(NotesSurface::Detail(d)) => Some(d),
            _ => None,
        }
    }

    fn refine_page_mut(&mut self, seq: Seq) -> Option<&mut RefinePage> {
        self.detail_mut()?.pages.iter_mut().find(|p| matches!(p, RefinePage::Pending { seq: s } if *s == seq))
    }

    fn page_refinement(&mut self, dir: Direction, fx: &mut Vec<Effect>) {
        let Some(d) = self.detail_mut() else { return };
        match dir {
            Direction::Prev => d.page = d.page.saturating_sub(1),
            Direction::Next if d.page + 1 < d.pages.len() => d.page += 1,
            Direction::Next if matches!(d.pages[d.page], RefinePage::Pending { .. }) => {}
            Direction::Next => {
                let note = d.note;
                let page = self.refine_request(note, fx);
                let d = self.detail_mut().unwrap();
                d.pages.push(page);
                d.page = d.pages.len() - 1;
            }
        }
    }

    fn refine(&mut self, at: u64, index: usize, fx: &mut Vec<Effect>) {
        let Some(d) = self.detail_mut() else { return };
        let note_id = d.note;
        let (seq, text) = match &d.pages[d.page] {
            RefinePage::Shown { seq, sentences } => match sentences.get(index) {
                Some(s) => (*seq, s.clone()),
                None => {
                    fx.push(Effect::rejected(format!("no refinement candidate {index}")));
                    return;
                }
            },
            RefinePage::Pending { .. } => {
                fx.push(Effect::rejected("refinement candidates are being generated"));
                return;
            }
            RefinePage::Failed { .. } => {
                fx.push(Effect::rejected("refinement generation failed"));
                return;
            }
        };
        let note = self.state.notes.iter_mut().find(|n| n.id == note_id).expect("note exists");
        note.text = text.clone();
        note.revisions.push(Revision { text, at_ms: at, source: RevisionSource::Refined { seq, index } });
        fx.push(Effect::Revised(note.clone()));
    }

    /// Checks the structural invariants; used by tests and debug builds.
    pub fn check_invariants(&self) -> Result<(), String> {
        let s = &self.state;
        if let Some(basis) = s.candidates.basis() {
            if basis != s.selection.as_slice() {
                return Err(format!("candidate basis {basis:?} differs from selection {:?}", s.selection));
            }
        } else if !s.selection.is_empty() && s.halted.is_none() {
            return Err("selection without candidates".into());
        }
        let unique: BTreeSet<_> = s.selection.iter().collect();
        if unique.len() != s.selection.len() {
            return Err("duplicate selection".into());
        }
        if !s.queue.groups.is_empty() && s.queue.page >= s.queue.groups.len() {
            return Err("queue page out of range".into());
        }
        if let Some(ring) = &s.ring {
            if ring.page >= ring.pages.len() {
                return Err("ring page out of range".into());
            }
        }
        for note in &s.notes {
            for k in &note.selection {
                if k.kind != KeywordKind::Customized {
                    let root = self.root_sentence(k.id);
                    if !note.transcripts.iter().any(|t| Some(t.id) == root) {
                        return Err(format!("note {} lacks the transcript of {}", note.id, k.word));
                    }
                }
            }
        }
        Ok(())
    }
}

fn stale(r: &GenerationResult) -> Effect {
    Effect::diagnostic("stale", format!("{} result {} arrived after it was superseded", r.kind, r.seq))
}
