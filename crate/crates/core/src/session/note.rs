use serde::{Deserialize, Serialize};

use super::{KeywordId, KeywordKind};
use crate::llm::Seq;
use crate::transcript::{Sentence, SentenceId};

pub type NoteId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteKind {
    Sentence,
    Keywords,
}

impl NoteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoteKind::Sentence => "sentence",
            NoteKind::Keywords => "keywords",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sentence" => Some(NoteKind::Sentence),
            "keywords" => Some(NoteKind::Keywords),
            _ => None,
        }
    }
}

/// A selected keyword as it was when the note was recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteKeyword {
    pub id: KeywordId,
    pub word: String,
    pub kind: KeywordKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSnapshot {
    pub seq: Seq,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum RevisionSource {
    Recorded,
    Refined { seq: Seq, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub text: String,
    pub at_ms: u64,
    #[serde(flatten)]
    pub source: RevisionSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub id: NoteId,
    pub kind: NoteKind,
    /// Text of the latest revision.
    pub text: String,
    pub selection: Vec<NoteKeyword>,
    pub candidates_shown: Option<CandidateSnapshot>,
    /// Index of the recorded candidate, for sentence notes.
    pub chosen: Option<usize>,
    /// Sentences behind the selected context and derivative keywords, in
    /// transcript order.
    pub transcripts: Vec<Sentence>,
    pub first_selection_ms: u64,
    pub last_selection_ms: u64,
    pub recorded_ms: u64,
    pub step_count: u32,
    /// Newest sentence at record time; refinement context stops here.
    pub context_upto: Option<SentenceId>,
    pub revisions: Vec<Revision>,
}

impl Note {
    pub fn has_derivative(&self) -> bool {
        self.selection.iter().any(|k| k.kind == KeywordKind::Derivative)
    }

    pub fn words(&self) -> Vec<String> {
        self.selection.iter().map(|k| k.word.clone()).collect()
    }
}
