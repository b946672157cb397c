mod common;

use std::sync::Arc;

use common::*;
use notepilot_core::eventlog;
use notepilot_core::llm::{Fault, FaultRule, MockConfig};
use notepilot_core::prompt::{PromptKind, PromptSet};
use notepilot_core::replay::{self, parse_script, ReplayConfig, ReplayError};
use notepilot_core::session::NoteKind;
use notepilot_core::store::{self, ExportFormat, SessionArchive};
use proptest::prelude::*;

fn demo() -> replay::Replay {
    let script = parse_script(DEMO_SCRIPT).unwrap();
    replay::run(&ReplayConfig::default(), &demo_trace(), &script).unwrap()
}

#[test]
fn demo_matches_golden_metrics() {
    assert_eq!(demo().metrics().to_string(), DEMO_METRICS);
}

#[test]
fn demo_notes_by_hand() {
    let r = demo();
    let kinds: Vec<NoteKind> = r.notes.iter().map(|n| n.kind).collect();
    assert_eq!(kinds, [NoteKind::Keywords, NoteKind::Sentence, NoteKind::Keywords]);
    // Presses resolve 500 ms later unless a different target comes first.
    let times: Vec<(u64, u64, u64)> =
        r.notes.iter().map(|n| (n.first_selection_ms, n.last_selection_ms, n.recorded_ms)).collect();
    assert_eq!(times, [(8400, 8900, 9200), (12100, 12600, 16000), (17700, 19500, 20000)]);
    assert_eq!(r.notes[1].text, "What speeches mentioned?");
    assert_eq!(r.notes[1].revisions.len(), 2);
    assert!(r.notes[2].has_derivative());
    // The ring was open from the double-click until the derivative was picked.
    assert_eq!(r.ring_spans, [(17700, 19500)]);
}

#[test]
fn demo_agrees_with_oracle() {
    let r = demo();
    assert_eq!(oracle_metrics(&eventlog::write_entries(&r.output.events)), r.metrics().to_string());
}

#[test]
fn replay_is_deterministic() {
    let a = demo();
    let first = (a.archive(&ReplayConfig::default()).to_json(), a.metrics().to_string());
    for _ in 0..3 {
        let b = demo();
        assert_eq!((b.archive(&ReplayConfig::default()).to_json(), b.metrics().to_string()), first);
    }
    assert!(a.id.starts_with("r-") && a.id.len() == 18);
}

#[test]
fn empty_script_yields_no_notes() {
    let r = replay::run(&ReplayConfig::default(), &demo_trace(), &[]).unwrap();
    assert!(r.notes.is_empty());
    let m = r.metrics();
    assert_eq!(m.get("note_count"), Some("0"));
    assert_eq!(m.get("pct_sentence_notes"), Some("0.0"));
    assert_eq!(m.get("derivative_display_time_fraction"), Some("0.0000"));
    // Extraction still ran for every sentence.
    assert_eq!(m.get("latency.extraction.count"), Some("3"));
}

#[test]
fn unknown_keyword_aborts_with_line_number() {
    let script = parse_script("0\ttouch\ton=1\n# pause\n9000\tpress\ttarget=keyword word=zebra\n").unwrap();
    match replay::run(&ReplayConfig::default(), &demo_trace(), &script) {
        Err(ReplayError::Script { line, reason }) => {
            assert_eq!(line, 3);
            assert!(reason.contains("zebra"), "{reason}");
        }
        other => panic!("expected a script error, got {other:?}"),
    }
}

#[test]
fn script_ignores_derived_lines_and_rejects_time_travel() {
    let r = demo();
    let log = eventlog::write_entries(&r.output.events);
    let script = parse_script(&log).unwrap();
    assert!(script.iter().all(|(_, e)| matches!(
        e.event,
        eventlog::LogEvent::Touch { .. } | eventlog::LogEvent::Input { .. }
    )));
    let err = parse_script("500\ttouch\ton=1\n400\ttouch\ton=0\n").unwrap_err();
    assert!(matches!(err, ReplayError::Script { line: 2, .. }));
}

#[test]
fn recorded_log_replays_as_script() {
    let r = demo();
    let script = parse_script(&eventlog::write_entries(&r.output.events)).unwrap();
    let again = replay::run(&ReplayConfig::default(), &demo_trace(), &script).unwrap();
    assert_eq!(again.notes, r.notes);
    assert_eq!(again.metrics(), r.metrics());
}

#[test]
fn archive_round_trips_through_disk() {
    let config = ReplayConfig::default();
    let r = demo();
    let archive = r.archive(&config);
    let root = tempfile::tempdir().unwrap();
    archive.write(root.path()).unwrap();
    let loaded = SessionArchive::load(root.path(), &r.id).unwrap();
    assert_eq!(loaded, archive);
    let rebuilt = replay::reproduce(&loaded, Arc::new(PromptSet::shipped())).unwrap();
    assert_eq!(store::notes_text(&rebuilt.output.notes), loaded.notes_text());
    assert_eq!(rebuilt.notes, loaded.notes);
    assert_eq!(rebuilt.metrics(), r.metrics());
    let json = loaded.export(ExportFormat::Structured);
    assert_eq!(SessionArchive::from_json(&json).unwrap(), loaded);
}

#[test]
fn plain_text_export_lists_notes_in_order() {
    let text = demo().archive(&ReplayConfig::default()).export(ExportFormat::PlainText);
    let heads: Vec<&str> = text.lines().filter(|l| l.starts_with(char::is_numeric)).collect();
    assert_eq!(
        heads,
        ["1. [keywords] meetings, rallies", "2. [sentence] What speeches mentioned?", "3. [keywords] rallies, radio"]
    );
    assert!(text.contains("   revision 1: What speeches noted?\n"));
}

#[test]
fn timeouts_surface_as_failures() {
    let config = ReplayConfig {
        mock: MockConfig {
            faults: vec![FaultRule { kind: Some(PromptKind::Organize), seq: None, failing_attempts: 2, fault: Fault::Stall }],
            ..MockConfig::default()
        },
        ..ReplayConfig::default()
    };
    let script = parse_script("8000\ttouch\ton=1\n8200\tpress\ttarget=keyword word=meetings\n30000\ttouch\ton=0\n").unwrap();
    let r = replay::run(&config, &demo_trace(), &script).unwrap();
    let log = eventlog::write_entries(&r.output.events);
    // The click lands at 8700; the request times out 10 s later.
    assert!(log.contains("18700\tgeneration_failed\tseq=3 lane=organize kind=organize code=timeout after=10000"), "{log}");
    assert!(r.notes.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn oracle_agrees_on_random_scripts(seed in any::<u64>()) {
        let text = random_script(seed, 20);
        let script = parse_script(&text).unwrap();
        let r = replay::run(&ReplayConfig::default(), &demo_trace(), &script).unwrap();
        let log = eventlog::write_entries(&r.output.events);
        prop_assert_eq!(oracle_metrics(&log), r.metrics().to_string());
        let rebuilt = replay::reproduce(&r.archive(&ReplayConfig::default()), Arc::new(PromptSet::shipped())).unwrap();
        prop_assert_eq!(store::notes_text(&rebuilt.output.notes), store::notes_text(&r.output.notes));
    }
}
