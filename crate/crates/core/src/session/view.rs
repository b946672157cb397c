//! What a client renders, projected from the session state. Views are plain
//! data so a reconnecting client can be handed the whole thing.

use serde::{Deserialize, Serialize};

use super::{
    Candidates, KeywordId, KeywordKind, Mode, Note, NoteId, NoteKind, NotesSurface, RefinePage, Session, Visibility,
};
use crate::llm::Seq;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordView {
    pub id: KeywordId,
    pub word: String,
    pub kind: KeywordKind,
    pub selected: bool,
    /// Belongs to the most recent sentence's group.
    pub underlined: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueView {
    pub page: usize,
    pub pages: usize,
    pub keywords: Vec<KeywordView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatesView {
    /// none, pending, shown or failed.
    pub state: String,
    pub seq: Option<Seq>,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingView {
    pub origin: KeywordView,
    pub slots: Vec<Option<KeywordView>>,
    pub page: usize,
    pub pages: usize,
    pub pending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteSummary {
    pub id: NoteId,
    pub kind: NoteKind,
    pub text: String,
    pub revisions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetailView {
    pub note: Note,
    /// State of the refinement page on screen.
    pub candidates: CandidatesView,
    pub page: usize,
    pub pages: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct View {
    pub visibility: Visibility,
    pub mode: Mode,
    pub queue: QueueView,
    pub customized: Vec<KeywordView>,
    pub selection: Vec<KeywordView>,
    pub candidates: CandidatesView,
    pub ring: Option<RingView>,
    pub notes: Vec<NoteSummary>,
    pub detail: Option<DetailView>,
}

impl View {
    /// Named parts, each serialized on its own, so clients can be sent only
    /// what changed.
    pub fn parts(&self) -> Vec<(&'static str, serde_json::Value)> {
        fn value<T: Serialize>(v: &T) -> serde_json::Value {
            serde_json::to_value(v).expect("view parts serialize")
        }
        vec![
            ("status", serde_json::json!({ "visibility": self.visibility, "mode": self.mode })),
            ("queue", value(&self.queue)),
            ("customized", value(&self.customized)),
            ("selection", value(&self.selection)),
            ("candidates", value(&self.candidates)),
            ("ring", value(&self.ring)),
            ("notes", value(&self.notes)),
            ("detail", value(&self.detail)),
        ]
    }
}

impl Session {
    pub fn view(&self) -> View {
        let s = self.state();
        let latest = s.queue.latest();
        let kv = |id: &KeywordId| {
            let k = &s.keywords[id];
            let underlined = match k.source {
                super::KeywordSource::Sentence { id } => Some(id) == latest,
                _ => false,
            };
            KeywordView { id: k.id, word: k.word.clone(), kind: k.kind, selected: s.selection.contains(id), underlined }
        };
        let queue = QueueView {
            page: s.queue.page,
            pages: s.queue.groups.len(),
            keywords: s.queue.visible().map(|g| g.keywords.iter().map(kv).collect()).unwrap_or_default(),
        };
        let ring = s.ring.as_ref().map(|r| {
            let page = &r.pages[r.page];
            RingView {
                origin: kv(&r.origin),
                slots: page.slots.iter().map(|slot| slot.as_ref().map(kv)).collect(),
                page: r.page,
                pages: r.pages.len(),
                pending: !page.pending.is_empty(),
            }
        });
        let detail = match &s.notes_view {
            Some(NotesSurface::Detail(d)) => s.notes.iter().find(|n| n.id == d.note).map(|note| DetailView {
                note: note.clone(),
                candidates: refine_view(&d.pages[d.page]),
                page: d.page,
                pages: d.pages.len(),
            }),
            _ => None,
        };
        View {
            visibility: s.visibility,
            mode: self.mode(),
            queue,
            customized: s.customized.iter().map(kv).collect(),
            selection: s.selection.iter().map(kv).collect(),
            candidates: candidates_view(&s.candidates),
            ring,
            notes: s
                .notes
                .iter()
                .map(|n| NoteSummary { id: n.id, kind: n.kind, text: n.text.clone(), revisions: n.revisions.len() })
                .collect(),
            detail,
        }
    }
}

fn candidates_view(c: &Candidates) -> CandidatesView {
    let (state, sentences) = match c {
        Candidates::None => ("none", Vec::new()),
        Candidates::Pending { .. } => ("pending", Vec::new()),
        Candidates::Shown { sentences, .. } => ("shown", sentences.clone()),
        Candidates::Failed { .. } => ("failed", Vec::new()),
    };
    CandidatesView { state: state.into(), seq: c.seq(), sentences }
}

fn refine_view(p: &RefinePage) -> CandidatesView {
    let (state, sentences) = match p {
        RefinePage::Pending { .. } => ("pending", Vec::new()),
        RefinePage::Shown { sentences, .. } => ("shown", sentences.clone()),
        RefinePage::Failed { .. } => ("failed", Vec::new()),
    };
    CandidatesView { state: state.into(), seq: Some(p.seq()), sentences }
}
