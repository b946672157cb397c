//! Session statistics over recorded notes.
//!
//! Reported as `name=value` lines in a fixed order. A quick note is a
//! keyword note without derivative keywords, recorded less than
//! [`QUICK_NOTE_MS`] after the last selection. A note's time runs from its
//! first selection to recording.

use std::collections::BTreeMap;
use std::fmt;

use crate::prompt::PromptKind;
use crate::session::{Note, NoteKind};

pub const QUICK_NOTE_MS: u64 = 2000;

pub fn is_quick(note: &Note) -> bool {
    note.kind == NoteKind::Keywords
        && !note.has_derivative()
        && note.recorded_ms.saturating_sub(note.last_selection_ms) < QUICK_NOTE_MS
}

pub fn note_time(note: &Note) -> u64 {
    note.recorded_ms.saturating_sub(note.first_selection_ms)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metrics {
    pub values: Vec<(String, String)>,
}

impl Metrics {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn parse(text: &str) -> Option<Self> {
        let values = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect::<Option<_>>()?;
        Some(Self { values })
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in &self.values {
            writeln!(f, "{name}={value}")?;
        }
        Ok(())
    }
}

fn pct(part: usize, whole: usize) -> String {
    if whole == 0 {
        "0.0".into()
    } else {
        format!("{:.1}", part as f64 * 100.0 / whole as f64)
    }
}

fn overlap(spans: &[(u64, u64)], from: u64, to: u64) -> u64 {
    spans.iter().map(|&(a, b)| b.min(to).saturating_sub(a.max(from))).sum()
}

pub fn compute(notes: &[Note], ring_spans: &[(u64, u64)], latencies: &[(PromptKind, u64)]) -> Metrics {
    let mut v: Vec<(String, String)> = Vec::new();
    let mut put = |name: String, value: String| v.push((name, value));
    let n = notes.len();
    put("note_count".into(), n.to_string());
    for note in notes {
        let p = format!("note.{}", note.id);
        put(format!("{p}.kind"), note.kind.as_str().into());
        put(format!("{p}.time_ms"), note_time(note).to_string());
        put(format!("{p}.steps"), note.step_count.to_string());
        put(format!("{p}.quick"), is_quick(note).to_string());
        put(format!("{p}.beyond_context"), note.has_derivative().to_string());
    }
    let keyword_notes: Vec<&Note> = notes.iter().filter(|n| n.kind == NoteKind::Keywords).collect();
    let kw_mean = if keyword_notes.is_empty() {
        0.0
    } else {
        keyword_notes.iter().map(|n| n.selection.len()).sum::<usize>() as f64 / keyword_notes.len() as f64
    };
    put("keywords_per_keyword_note".into(), format!("{kw_mean:.2}"));
    put("pct_sentence_notes".into(), pct(n - keyword_notes.len(), n));
    put("pct_keyword_notes".into(), pct(keyword_notes.len(), n));
    put("pct_quick_notes".into(), pct(notes.iter().filter(|n| is_quick(n)).count(), n));
    put("pct_beyond_context_notes".into(), pct(notes.iter().filter(|n| n.has_derivative()).count(), n));

    let total: u64 = notes.iter().map(note_time).sum();
    let shown: u64 = notes.iter().map(|n| overlap(ring_spans, n.first_selection_ms, n.recorded_ms)).sum();
    let fraction = if total == 0 { 0.0 } else { shown as f64 / total as f64 };
    put("derivative_display_time_fraction".into(), format!("{fraction:.4}"));

    let mut by_kind: BTreeMap<PromptKind, Vec<u64>> = PromptKind::ALL.into_iter().map(|k| (k, Vec::new())).collect();
    for (kind, ms) in latencies {
        by_kind.entry(*kind).or_default().push(*ms);
    }
    for (kind, xs) in by_kind {
        let p = format!("latency.{}", kind.as_str());
        let mean = if xs.is_empty() { 0.0 } else { xs.iter().sum::<u64>() as f64 / xs.len() as f64 };
        put(format!("{p}.count"), xs.len().to_string());
        put(format!("{p}.mean_ms"), format!("{mean:.1}"));
        put(format!("{p}.min_ms"), xs.iter().min().copied().unwrap_or(0).to_string());
        put(format!("{p}.max_ms"), xs.iter().max().copied().unwrap_or(0).to_string());
    }
    Metrics { values: v }
}
