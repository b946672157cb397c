//! Prompt rendering, response parsing and output validation for the three
//! LLM capabilities: keyword extraction, keyword derivation and candidate
//! sentence organization.

mod parse;
mod template;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::transcript::Sentence;

pub use parse::{parse_keyword_response, parse_sentence_response, ParseError};
pub use template::{PromptKind, PromptSet, PromptTemplate, TemplateError};
pub use validate::{
    filter_items, validate_candidates, validate_derivation, validate_extraction, ValidationReport, Violation,
    ViolationKind,
};

/// At most this many context keywords per sentence.
pub const MAX_CONTEXT_KEYWORDS: usize = 4;
/// Each derivation request asks for this many words.
pub const DERIVED_PER_REQUEST: usize = 2;
pub const CANDIDATE_COUNT: usize = 3;
pub const MAX_CANDIDATE_WORDS: usize = 10;
/// Sentences of transcript given as context to derivation and organization.
pub const CONTEXT_SENTENCES: usize = 15;

/// Question words recognised in the customized keyword set.
const QUESTION_WORDS: &[&str] = &["what", "why", "how", "who", "whom", "whose", "when", "where", "which"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText(pub String);

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercased, de-duplicated, non-empty words in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordList(Vec<String>);

impl KeywordList {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for w in words {
            let w = w.as_ref().trim().to_lowercase();
            if !w.is_empty() && !out.contains(&w) {
                out.push(w);
            }
        }
        Self(out)
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        let w = word.to_lowercase();
        self.0.contains(&w)
    }

    pub fn truncate(&mut self, n: usize) {
        self.0.truncate(n);
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }

    /// The newline-separated form the prompts ask the model for.
    pub fn to_response_text(&self) -> String {
        self.0.join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomizedRole {
    QuestionWord,
    QuestionMark,
    Plain,
}

/// A user-predefined keyword shown on the left of the layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomizedKeyword {
    pub word: String,
}

impl CustomizedKeyword {
    pub fn new(word: impl Into<String>) -> Self {
        Self { word: word.into() }
    }

    pub fn role(&self) -> CustomizedRole {
        let w = self.word.trim();
        if w == "?" {
            CustomizedRole::QuestionMark
        } else if QUESTION_WORDS.contains(&w.to_lowercase().as_str()) {
            CustomizedRole::QuestionWord
        } else {
            CustomizedRole::Plain
        }
    }

    /// What, Why, How and "?".
    pub fn defaults() -> Vec<CustomizedKeyword> {
        ["What", "Why", "How", "?"].into_iter().map(CustomizedKeyword::new).collect()
    }
}

/// Which customized question keywords are part of a selection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomizedChoice {
    /// Selected question words, in selection order.
    pub question_words: Vec<String>,
    pub question_mark: bool,
    /// Every question word in the configured customized set.
    pub configured_question_words: Vec<String>,
}

impl CustomizedChoice {
    pub fn form(&self) -> QuestionForm {
        if !self.question_words.is_empty() {
            QuestionForm::StartWith(self.question_words.clone())
        } else if self.question_mark {
            QuestionForm::NoQuestionWordStart(self.configured_question_words.clone())
        } else {
            QuestionForm::Fact
        }
    }
}

/// The sentence form an organize request asks for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionForm {
    /// Questions starting with one of these words.
    StartWith(Vec<String>),
    /// Questions that do not start with any of these words.
    NoQuestionWordStart(Vec<String>),
    Fact,
}

fn join_context(context: &[Sentence]) -> String {
    let parts: Vec<&str> = context.iter().map(|s| s.text.as_str()).collect();
    parts.join(" ")
}

fn join_list(words: &[String]) -> String {
    words.join(", ")
}

impl PromptSet {
    /// The extraction prompt only sees the new sentence.
    pub fn render_extraction(&self, sentence: &Sentence) -> PromptText {
        let mut values = BTreeMap::new();
        values.insert("new_speech_input", sentence.text.clone());
        PromptText(self.get(PromptKind::Extraction).render(&values, &BTreeSet::new()))
    }

    pub fn render_derive_exclusive(&self, origin: &str, displayed: &KeywordList) -> PromptText {
        let mut values = BTreeMap::new();
        values.insert("original_keyword", origin.to_string());
        values.insert("currently_displaying_context_keywords", join_list(displayed.words()));
        PromptText(self.get(PromptKind::DeriveExclusive).render(&values, &BTreeSet::new()))
    }

    pub fn render_derive_contextual(
        &self,
        origin: &str,
        displayed: &KeywordList,
        context: &[Sentence],
    ) -> PromptText {
        let context = &context[context.len().saturating_sub(CONTEXT_SENTENCES)..];
        let mut values = BTreeMap::new();
        values.insert("previous_speech", join_context(context));
        values.insert("original_keyword", origin.to_string());
        values.insert("currently_displaying_context_keywords", join_list(displayed.words()));
        PromptText(self.get(PromptKind::DeriveContextual).render(&values, &BTreeSet::new()))
    }

    /// `keywords` are the selected words the sentences must contain; selected
    /// question words and "?" travel in `choice`.
    pub fn render_organize(
        &self,
        keywords: &[String],
        choice: &CustomizedChoice,
        context: &[Sentence],
    ) -> PromptText {
        let context = &context[context.len().saturating_sub(CONTEXT_SENTENCES)..];
        let mut values = BTreeMap::new();
        values.insert("previous_speech", join_context(context));
        values.insert("selected_keywords", join_list(keywords));
        let mut flags = BTreeSet::new();
        match choice.form() {
            QuestionForm::StartWith(words) => {
                flags.insert("question_words");
                values.insert("selected_question_words", join_list(&words));
            }
            QuestionForm::NoQuestionWordStart(words) => {
                flags.insert("question_mark");
                values.insert("question_words_in_customized_keywords", join_list(&words));
            }
            QuestionForm::Fact => {
                flags.insert("fact");
            }
        }
        PromptText(self.get(PromptKind::Organize).render(&values, &flags))
    }
}
