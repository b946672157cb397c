//! Test-side helpers shared by integration tests and the acceptance runner.

#![allow(dead_code)]

use std::collections::BTreeMap;

use notepilot_core::eventlog::{self, LogLine};
use notepilot_core::transcript::{parse_trace, TimedText};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const DEMO_TRACE: &str = include_str!("../../assets/demo/demo.trace");
pub const DEMO_SCRIPT: &str = include_str!("../../assets/demo/demo.script");
pub const DEMO_METRICS: &str = include_str!("../../assets/demo/demo.metrics");

pub fn demo_trace() -> Vec<TimedText> {
    parse_trace(DEMO_TRACE).unwrap()
}

struct OracleNote {
    id: String,
    kind: String,
    time: u64,
    steps: u32,
    quick: bool,
    beyond: bool,
    keywords: usize,
    interval: (u64, u64),
}

/// Recomputes the metrics report from raw event-log text, tracking the
/// selection, ring and visibility from input lines alone.
pub fn oracle_metrics(events_log: &str) -> String {
    let lines = eventlog::parse_lines(events_log).unwrap();
    let mut visible = false;
    let mut notes_open = false;
    let mut detail = false;
    let mut ring_open = false;
    let mut selection: Vec<(String, String)> = Vec::new();
    let mut first: Option<u64> = None;
    let mut last: Option<u64> = None;
    let mut steps = 0u32;
    let mut notes: Vec<OracleNote> = Vec::new();
    let mut spans: Vec<(u64, u64)> = Vec::new();
    let mut shown_since: Option<u64> = None;
    let mut latencies: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut end = 0;

    for (_, line) in &lines {
        let t = line.t_ms;
        end = end.max(t);
        let get = |k: &str| line.get(k).unwrap_or_default();
        match line.kind.as_str() {
            "touch" => visible = get("on") == "1",
            "generation" => latencies.entry(get("kind")).or_default().push(get("latency").parse().unwrap()),
            "input" if get("result") == "ok" => {
                let key = (get("keyword"), get("kind"));
                let double = get("action") == "double_click";
                let mut step = |added: bool, selection: &Vec<(String, String)>| {
                    if added {
                        first.get_or_insert(t);
                        last = Some(t);
                    }
                    if first.is_some() {
                        steps += 1;
                    }
                    if selection.is_empty() {
                        first = None;
                        last = None;
                        steps = 0;
                    }
                };
                let toggle = |selection: &mut Vec<(String, String)>| match selection.iter().position(|k| *k == key) {
                    Some(p) => {
                        selection.remove(p);
                        false
                    }
                    None => {
                        selection.push(key.clone());
                        true
                    }
                };
                match get("target").as_str() {
                    "keyword" if double && key.1 == "context" => {
                        let added = !selection.contains(&key);
                        if added {
                            selection.push(key.clone());
                        }
                        step(added, &selection);
                        ring_open = true;
                    }
                    "keyword" => {
                        let added = toggle(&mut selection);
                        step(added, &selection);
                    }
                    "chip" if double => step(false, &selection),
                    "chip" => {
                        selection.retain(|k| *k != key);
                        step(false, &selection);
                    }
                    "ring" if double => step(false, &selection),
                    "ring" => {
                        let added = toggle(&mut selection);
                        step(added, &selection);
                        ring_open = false;
                    }
                    "candidate" => step(false, &selection),
                    "notes" => {
                        notes_open = !notes_open;
                        detail = false;
                    }
                    "note" => detail = true,
                    "back" if notes_open && detail => detail = false,
                    "back" if notes_open => notes_open = false,
                    "back" => ring_open = false,
                    _ => {}
                }
            }
            "recorded" => {
                let kind = get("kind");
                let f = first.unwrap();
                let beyond = selection.iter().any(|k| k.1 == "derivative");
                notes.push(OracleNote {
                    id: get("note"),
                    quick: kind == "keywords" && !beyond && t - last.unwrap() < 2000,
                    kind,
                    time: t - f,
                    steps,
                    beyond,
                    keywords: selection.len(),
                    interval: (f, t),
                });
                selection.clear();
                first = None;
                last = None;
                steps = 0;
                ring_open = false;
            }
            _ => {}
        }
        let shown = visible && ring_open && !notes_open;
        match (shown, shown_since) {
            (true, None) => shown_since = Some(t),
            (false, Some(s)) => {
                spans.push((s, t));
                shown_since = None;
            }
            _ => {}
        }
    }
    if let Some(s) = shown_since {
        spans.push((s, end));
    }

    let mut out = String::new();
    let mut put = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
    let n = notes.len();
    put("note_count", n.to_string());
    for note in &notes {
        put(&format!("note.{}.kind", note.id), note.kind.clone());
        put(&format!("note.{}.time_ms", note.id), note.time.to_string());
        put(&format!("note.{}.steps", note.id), note.steps.to_string());
        put(&format!("note.{}.quick", note.id), note.quick.to_string());
        put(&format!("note.{}.beyond_context", note.id), note.beyond.to_string());
    }
    let kw: Vec<&OracleNote> = notes.iter().filter(|n| n.kind == "keywords").collect();
    let mean_kw = if kw.is_empty() { 0.0 } else { kw.iter().map(|n| n.keywords).sum::<usize>() as f64 / kw.len() as f64 };
    put("keywords_per_keyword_note", format!("{mean_kw:.2}"));
    let pct = |c: usize| if n == 0 { "0.0".to_string() } else { format!("{:.1}", 100.0 * c as f64 / n as f64) };
    put("pct_sentence_notes", pct(n - kw.len()));
    put("pct_keyword_notes", pct(kw.len()));
    put("pct_quick_notes", pct(notes.iter().filter(|n| n.quick).count()));
    put("pct_beyond_context_notes", pct(notes.iter().filter(|n| n.beyond).count()));
    // Brute force: count every millisecond of note time the ring was shown.
    let mut shown = 0u64;
    let mut total = 0u64;
    for note in &notes {
        for ms in note.interval.0..note.interval.1 {
            total += 1;
            if spans.iter().any(|&(a, b)| a <= ms && ms < b) {
                shown += 1;
            }
        }
    }
    let frac = if total == 0 { 0.0 } else { shown as f64 / total as f64 };
    put("derivative_display_time_fraction", format!("{frac:.4}"));
    for kind in ["extraction", "derive_exclusive", "derive_contextual", "organize"] {
        let xs = latencies.get(kind).cloned().unwrap_or_default();
        let mean = if xs.is_empty() { 0.0 } else { xs.iter().sum::<u64>() as f64 / xs.len() as f64 };
        put(&format!("latency.{kind}.count"), xs.len().to_string());
        put(&format!("latency.{kind}.mean_ms"), format!("{mean:.1}"));
        put(&format!("latency.{kind}.min_ms"), xs.iter().min().unwrap_or(&0).to_string());
        put(&format!("latency.{kind}.max_ms"), xs.iter().max().unwrap_or(&0).to_string());
    }
    out
}

/// Ids of the context keywords likely on the newest queue page at `t`.
fn likely_page(t: u64) -> std::ops::Range<u64> {
    let group = [16790, 11890, 7490].iter().position(|&at| t >= at).map_or(0, |i| 2 - i as u64);
    4 + 4 * group..8 + 4 * group
}

/// A random script of at most `max_events` user actions against the demo
/// trace, addressing targets by id so every line resolves.
pub fn random_script(seed: u64, max_events: usize) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.random_range(0..=max_events);
    // Keywords of the first sentence exist from 7490 ms; ids 0..4 are the
    // customized column, context keywords follow, derivatives come last.
    let mut t = rng.random_range(7000..13000u64);
    let mut lines = vec![format!("{t}\ttouch\ton=1")];
    while lines.len() < n {
        t += rng.random_range(0..1500u64);
        let action = if rng.random_bool(0.35) { "double_click" } else { "click" };
        let keyword = |rng: &mut StdRng| {
            if rng.random_bool(0.7) {
                rng.random_range(likely_page(t))
            } else {
                rng.random_range(0..16)
            }
        };
        let target = match rng.random_range(0..18) {
            0..=4 => format!("target=keyword id={}", keyword(&mut rng)),
            5..=6 => format!("target=chip id={}", rng.random_range(0..24)),
            7..=9 => format!("target=ring slot={}", rng.random_range(0..5)),
            10..=11 => format!("target=candidate index={}", rng.random_range(0..3)),
            12 => "target=back".to_string(),
            13 => {
                let surface = ["queue", "ring", "refinement"][rng.random_range(0..3)];
                let dir = ["prev", "next"][rng.random_range(0..2)];
                format!("target=arrow surface={surface} dir={dir}")
            }
            14 if rng.random_bool(0.5) => "target=notes".to_string(),
            14 => format!("target=note id={}", rng.random_range(1..4)),
            15..=16 => {
                // Derive from a keyword, pick a derivative, record the keywords.
                lines.push(format!("{t}\tinput\ttarget=keyword id={} action=double_click", keyword(&mut rng)));
                t += rng.random_range(1500..2500u64);
                lines.push(format!("{t}\tinput\ttarget=ring slot={} action=click", rng.random_range(1..5)));
                t += rng.random_range(200..1500u64);
                lines.push(format!("{t}\tinput\ttarget=candidate index=0 action=double_click"));
                continue;
            }
            _ => {
                lines.push(format!("{t}\ttouch\ton={}", u8::from(rng.random_bool(0.8))));
                continue;
            }
        };
        let kind = if rng.random_bool(0.5) { "press" } else { "input" };
        let line = LogLine::parse(&format!("{t}\t{kind}\t{target}"), 0).unwrap();
        let line = if kind == "input" { line.with("action", action) } else { line };
        lines.push(line.to_string());
    }
    lines.truncate(n.max(1));
    lines.iter().map(|l| format!("{l}\n")).collect()
}
