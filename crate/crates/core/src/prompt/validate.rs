//! Constraint checks on parsed LLM output. Validators report, they never
//! fail; the gateway decides whether to retry or filter.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{KeywordList, QuestionForm, CANDIDATE_COUNT, MAX_CANDIDATE_WORDS, MAX_CONTEXT_KEYWORDS};
use crate::stemmer::same_lemma;
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Extraction keyword is not a token of the sentence.
    NotInSentence,
    TooMany { max: usize, got: usize },
    WrongCount { expected: usize, got: usize },
    /// Derived word repeats a displayed keyword.
    Overlap,
    /// Derived word shares a lemma with the origin keyword.
    SameLemma,
    TooLong { words: usize },
    MissingKeyword { keyword: String },
    WrongStart,
    ForbiddenStart,
    MissingQuestionMark,
    NotFact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending item, or `None` for list-level problems.
    pub item: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn item_ok(&self, index: usize) -> bool {
        !self.violations.iter().any(|v| v.item == Some(index))
    }

    fn flag(&mut self, item: Option<usize>, kind: ViolationKind) {
        self.violations.push(Violation { item, kind });
    }
}

/// Items without item-level violations, capped at `max`.
pub fn filter_items<T: Clone>(items: &[T], report: &ValidationReport, max: usize) -> Vec<T> {
    items
        .iter()
        .enumerate()
        .filter(|(i, _)| report.item_ok(*i))
        .map(|(_, item)| item.clone())
        .take(max)
        .collect()
}

pub fn validate_extraction(keywords: &KeywordList, sentence_text: &str) -> ValidationReport {
    let sentence_tokens: BTreeSet<String> = text::tokens_lower(sentence_text).into_iter().collect();
    let mut report = ValidationReport::default();
    for (i, kw) in keywords.words().iter().enumerate() {
        // The keyword must be one whole token: no phrases, no punctuation.
        let kw_tokens = text::tokens_lower(kw);
        let whole = kw_tokens.len() == 1 && kw_tokens[0] == kw.trim().to_lowercase();
        if !whole || !sentence_tokens.contains(&kw_tokens[0]) {
            report.flag(Some(i), ViolationKind::NotInSentence);
        }
    }
    if keywords.len() > MAX_CONTEXT_KEYWORDS {
        report.flag(None, ViolationKind::TooMany { max: MAX_CONTEXT_KEYWORDS, got: keywords.len() });
    }
    report
}

pub fn validate_derivation(
    words: &KeywordList,
    origin: &str,
    displayed: &KeywordList,
    expected: usize,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, w) in words.words().iter().enumerate() {
        if displayed.contains(w) {
            report.flag(Some(i), ViolationKind::Overlap);
        }
        if same_lemma(w, &origin.to_lowercase()) {
            report.flag(Some(i), ViolationKind::SameLemma);
        }
    }
    if words.len() != expected {
        report.flag(None, ViolationKind::WrongCount { expected, got: words.len() });
    }
    report
}

fn contains_keyword(sentence_tokens: &[String], keyword: &str) -> bool {
    let kw_tokens = text::tokens_lower(keyword);
    !kw_tokens.is_empty()
        && kw_tokens
            .iter()
            .all(|k| sentence_tokens.iter().any(|t| t == k || same_lemma(t, k)))
}

/// Checks each candidate against the length limit, keyword containment and
/// the requested sentence form.
pub fn validate_candidates(sentences: &[String], keywords: &[String], form: &QuestionForm) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, s) in sentences.iter().enumerate() {
        let tokens = text::tokens_lower(s);
        if tokens.len() > MAX_CANDIDATE_WORDS {
            report.flag(Some(i), ViolationKind::TooLong { words: tokens.len() });
        }
        for kw in keywords {
            if !contains_keyword(&tokens, kw) {
                report.flag(Some(i), ViolationKind::MissingKeyword { keyword: kw.clone() });
            }
        }
        let first = tokens.first().map(String::as_str).unwrap_or("");
        let is_question = s.trim_end().ends_with('?');
        match form {
            QuestionForm::StartWith(words) => {
                if !words.iter().any(|w| w.to_lowercase() == first) {
                    report.flag(Some(i), ViolationKind::WrongStart);
                }
                if !is_question {
                    report.flag(Some(i), ViolationKind::MissingQuestionMark);
                }
            }
            QuestionForm::NoQuestionWordStart(words) => {
                if words.iter().any(|w| w.to_lowercase() == first) {
                    report.flag(Some(i), ViolationKind::ForbiddenStart);
                }
                if !is_question {
                    report.flag(Some(i), ViolationKind::MissingQuestionMark);
                }
            }
            QuestionForm::Fact => {
                if is_question {
                    report.flag(Some(i), ViolationKind::NotFact);
                }
            }
        }
    }
    if sentences.len() != CANDIDATE_COUNT {
        report.flag(None, ViolationKind::WrongCount { expected: CANDIDATE_COUNT, got: sentences.len() });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE_SENTENCE: &str = "People went from city to city, holding rallies, and meetings.";

    fn kinds(r: &ValidationReport) -> Vec<ViolationKind> {
        r.violations.iter().map(|v| v.kind.clone()).collect()
    }

    #[test]
    fn example_extraction_passes() {
        let k = KeywordList::new(["people", "city", "rallies", "meetings"]);
        assert!(validate_extraction(&k, EXAMPLE_SENTENCE).is_ok());
    }

    #[test]
    fn absent_keyword_flagged() {
        let r = validate_extraction(&KeywordList::new(["government"]), EXAMPLE_SENTENCE);
        assert_eq!(r.violations, [Violation { item: Some(0), kind: ViolationKind::NotInSentence }]);
    }

    #[test]
    fn phrases_and_punctuated_keywords_flagged() {
        let k = KeywordList::new(["city rallies", "city,", "-", "Rallies"]);
        let r = validate_extraction(&k, EXAMPLE_SENTENCE);
        assert_eq!(
            r.violations.iter().map(|v| v.item).collect::<Vec<_>>(),
            [Some(0), Some(1), Some(2)]
        );
    }

    #[test]
    fn too_many_keywords_first_four_retained() {
        let k = KeywordList::new(["people", "went", "city", "rallies", "meetings"]);
        let r = validate_extraction(&k, EXAMPLE_SENTENCE);
        assert_eq!(kinds(&r), [ViolationKind::TooMany { max: 4, got: 5 }]);
        assert_eq!(filter_items(k.words(), &r, 4), ["people", "went", "city", "rallies"]);
    }

    #[test]
    fn substring_is_not_a_token() {
        let r = validate_extraction(&KeywordList::new(["meet"]), EXAMPLE_SENTENCE);
        assert!(!r.is_ok());
    }

    #[test]
    fn derivation_rules() {
        let displayed = KeywordList::new(["people", "city", "rallies", "meetings"]);
        assert!(validate_derivation(&KeywordList::new(["media", "civilization"]), "rallies", &displayed, 2).is_ok());
        let r = validate_derivation(&KeywordList::new(["rally"]), "rallies", &KeywordList::default(), 1);
        assert_eq!(kinds(&r), [ViolationKind::SameLemma]);
        let r = validate_derivation(&KeywordList::new(["city"]), "rallies", &displayed, 1);
        assert_eq!(kinds(&r), [ViolationKind::Overlap]);
        let r = validate_derivation(&KeywordList::new(["media"]), "rallies", &displayed, 2);
        assert_eq!(kinds(&r), [ViolationKind::WrongCount { expected: 2, got: 1 }]);
    }

    #[test]
    fn example_candidate_passes() {
        let form = QuestionForm::StartWith(vec!["What".into()]);
        let kws = vec!["city".to_string(), "sign".to_string()];
        let r = validate_candidates(&["What signs were displayed in each city?".to_string()], &kws, &form);
        assert_eq!(kinds(&r), [ViolationKind::WrongCount { expected: 3, got: 1 }]);
        assert!(r.item_ok(0));
    }

    #[test]
    fn eleven_words_too_long() {
        let form = QuestionForm::StartWith(vec!["What".into()]);
        let s = "What city had the most controversial and deeply divisive protest signs?".to_string();
        let r = validate_candidates(&[s], &["city".into(), "sign".into()], &form);
        assert!(r.violations.contains(&Violation { item: Some(0), kind: ViolationKind::TooLong { words: 11 } }));
    }

    #[test]
    fn fact_mode_containment() {
        let r = validate_candidates(&["The rallies grew daily.".to_string()], &["meetings".into()], &QuestionForm::Fact);
        assert!(r.violations.contains(&Violation {
            item: Some(0),
            kind: ViolationKind::MissingKeyword { keyword: "meetings".into() }
        }));
        let r = validate_candidates(&["Were meetings held?".to_string()], &["meetings".into()], &QuestionForm::Fact);
        assert!(r.violations.iter().any(|v| v.kind == ViolationKind::NotFact));
    }

    #[test]
    fn question_mark_mode() {
        let form = QuestionForm::NoQuestionWordStart(vec!["What".into(), "Why".into(), "How".into()]);
        let kws = ["city".to_string()];
        let r = validate_candidates(&["Is the city safe?".to_string()], &kws, &form);
        assert!(r.item_ok(0));
        let r = validate_candidates(&["Why is the city safe?".to_string()], &kws, &form);
        assert!(r.violations.iter().any(|v| v.kind == ViolationKind::ForbiddenStart));
        let r = validate_candidates(&["Is the city safe.".to_string()], &kws, &form);
        assert!(r.violations.iter().any(|v| v.kind == ViolationKind::MissingQuestionMark));
    }
}
