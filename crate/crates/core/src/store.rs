//! Session archives on disk.
//!
//! ```text
//! <root>/sessions/<id>/manifest        key=value lines
//! <root>/sessions/<id>/events.log      session event log
//! <root>/sessions/<id>/transcript.log  timed text, trace format
//! <root>/sessions/<id>/notes.log       note records and revisions
//! ```
//!
//! All files are append-only. A failed write puts the writer in degraded
//! mode: nothing further is written and every append reports the failure.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{NoteRecord, Output};
use crate::eventlog::{self, Entry, LogEvent, LogLine};
use crate::session::{CandidateSnapshot, KeywordKind, Note, NoteKeyword, NoteKind, Revision, RevisionSource};
use crate::transcript::{self, Sentence, SentenceId, TimedText, TraceRecord};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session id {0:?} may only contain letters, digits, '-' and '_'")]
    BadId(String),
    #[error("session {0} already exists")]
    Exists(String),
    #[error("no session {0}")]
    NotFound(String),
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("archive is in degraded read-only mode after: {0}")]
    Degraded(String),
    #[error("{file}: {reason}")]
    Corrupt { file: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    PlainText,
    Structured,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain_text" => Some(ExportFormat::PlainText),
            "structured" => Some(ExportFormat::Structured),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub created_at: u64,
    pub backend: String,
    pub model: Option<String>,
    pub customized: Vec<String>,
    /// Prompt kind to template hash.
    pub templates: BTreeMap<String, String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("format={FORMAT_VERSION}\nid={}\ncreated_at={}\nbackend={}\n", self.id, self.created_at, eventlog::encode(&self.backend));
        if let Some(model) = &self.model {
            out.push_str(&format!("model={}\n", eventlog::encode(model)));
        }
        let customized: Vec<String> = self.customized.iter().map(|c| eventlog::encode(c)).collect();
        out.push_str(&format!("customized={}\n", customized.join("|")));
        for (kind, hash) in &self.templates {
            out.push_str(&format!("template.{kind}={hash}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let bad = |reason: String| StoreError::Corrupt { file: "manifest", reason };
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: no '='", i + 1)))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing {k}")));
        let dec = |v: &str| eventlog::decode(v).map_err(bad);
        if get("format")? != FORMAT_VERSION.to_string() {
            return Err(bad(format!("unsupported format {}", get("format")?)));
        }
        let customized = get("customized")?;
        let customized = if customized.is_empty() {
            Vec::new()
        } else {
            customized.split('|').map(dec).collect::<Result<_, _>>()?
        };
        Ok(Manifest {
            id: get("id")?,
            created_at: get("created_at")?.parse().map_err(|_| bad("created_at is not an integer".into()))?,
            backend: dec(&get("backend")?)?,
            model: kv.get("model").map(|m| dec(m)).transpose()?,
            customized,
            templates: kv
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("template.").map(|kind| (kind.to_string(), v.clone())))
                .collect(),
        })
    }
}

pub fn validate_id(id: &str) -> Result<(), StoreError> {
    if !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
        Ok(())
    } else {
        Err(StoreError::BadId(id.to_string()))
    }
}

pub fn session_dir(root: &Path, id: &str) -> PathBuf {
    root.join("sessions").join(id)
}

/// Encodes one notes-log record.
pub fn note_line(record: &NoteRecord) -> LogLine {
    let n = &record.note;
    if record.revision > 1 {
        let rev = &n.revisions[record.revision - 1];
        let line = LogLine::new(record.t_ms, "revision").with("note", n.id).with("revision", record.revision).with("text", &rev.text);
        return match &rev.source {
            RevisionSource::Refined { seq, index } => line.with("source", "refined").with("seq", seq).with("index", index),
            RevisionSource::Recorded => line.with("source", "recorded"),
        };
    }
    let ids: Vec<String> = n.selection.iter().map(|k| k.id.to_string()).collect();
    let kinds: Vec<&str> = n.selection.iter().map(|k| k.kind.as_str()).collect();
    let words: Vec<&str> = n.selection.iter().map(|k| k.word.as_str()).collect();
    let sources: Vec<String> = n.transcripts.iter().map(|s| s.id.to_string()).collect();
    let mut line = LogLine::new(record.t_ms, "note")
        .with("id", n.id)
        .with("kind", n.kind.as_str())
        .with("text", &n.text)
        .with_list("sel_id", &ids)
        .with_list("sel_kind", &kinds)
        .with_list("sel_word", &words)
        .with_list("transcripts", &sources)
        .with("first", n.first_selection_ms)
        .with("last", n.last_selection_ms)
        .with("recorded", n.recorded_ms)
        .with("steps", n.step_count);
    if let Some(upto) = n.context_upto {
        line = line.with("upto", upto);
    }
    if let Some(c) = &n.candidates_shown {
        line = line.with("cand_seq", c.seq).with_list("candidates", &c.sentences);
    }
    if let Some(chosen) = n.chosen {
        line = line.with("chosen", chosen);
    }
    line
}

pub fn notes_text(records: &[NoteRecord]) -> String {
    records.iter().map(|r| format!("{}\n", note_line(r))).collect()
}

/// Rebuilds notes from a notes log; transcripts are resolved against
/// `sentences`.
pub fn parse_notes(text: &str, sentences: &BTreeMap<SentenceId, Sentence>) -> Result<Vec<Note>, StoreError> {
    let bad = |reason: String| StoreError::Corrupt { file: "notes.log", reason };
    let mut notes: Vec<Note> = Vec::new();
    for (n, line) in eventlog::parse_lines(text).map_err(|e| bad(e.to_string()))? {
        let get = |k: &str| line.get(k).ok_or_else(|| bad(format!("line {n}: missing {k}")));
        let num = |k: &str| -> Result<u64, StoreError> {
            get(k)?.parse().map_err(|_| bad(format!("line {n}: {k} is not an integer")))
        };
        let list = |k: &str| line.list(k).ok_or_else(|| bad(format!("line {n}: missing {k}")));
        match line.kind.as_str() {
            "note" => {
                let ids = list("sel_id")?;
                let kinds = list("sel_kind")?;
                let words = list("sel_word")?;
                if ids.len() != kinds.len() || ids.len() != words.len() {
                    return Err(bad(format!("line {n}: selection lists differ in length")));
                }
                let mut selection = Vec::new();
                for ((id, kind), word) in ids.iter().zip(&kinds).zip(words) {
                    selection.push(NoteKeyword {
                        id: id.parse().map_err(|_| bad(format!("line {n}: bad keyword id")))?,
                        kind: KeywordKind::parse(kind).ok_or_else(|| bad(format!("line {n}: bad keyword kind")))?,
                        word,
                    });
                }
                let mut transcripts = Vec::new();
                for id in list("transcripts")? {
                    let id: SentenceId = id.parse().map_err(|_| bad(format!("line {n}: bad sentence id")))?;
                    transcripts.push(
                        sentences.get(&id).cloned().ok_or_else(|| bad(format!("line {n}: unknown sentence {id}")))?,
                    );
                }
                let candidates_shown = match line.has("cand_seq") {
                    true => Some(CandidateSnapshot { seq: num("cand_seq")?, sentences: list("candidates")? }),
                    false => None,
                };
                let text = get("text")?;
                let recorded = num("recorded")?;
                notes.push(Note {
                    id: num("id")?,
                    kind: NoteKind::parse(&get("kind")?).ok_or_else(|| bad(format!("line {n}: bad note kind")))?,
                    text: text.clone(),
                    selection,
                    candidates_shown,
                    chosen: line.has("chosen").then(|| num("chosen")).transpose()?.map(|c| c as usize),
                    transcripts,
                    first_selection_ms: num("first")?,
                    last_selection_ms: num("last")?,
                    recorded_ms: recorded,
                    step_count: num("steps")? as u32,
                    context_upto: line.has("upto").then(|| num("upto")).transpose()?,
                    revisions: vec![Revision { text, at_ms: recorded, source: RevisionSource::Recorded }],
                });
            }
            "revision" => {
                let id = num("note")?;
                let note = notes.iter_mut().find(|x| x.id == id).ok_or_else(|| bad(format!("line {n}: revision of unknown note {id}")))?;
                if num("revision")? as usize != note.revisions.len() + 1 {
                    return Err(bad(format!("line {n}: revisions out of order")));
                }
                let source = match get("source")?.as_str() {
                    "refined" => RevisionSource::Refined { seq: num("seq")?, index: num("index")? as usize },
                    _ => RevisionSource::Recorded,
                };
                let text = get("text")?;
                note.text = text.clone();
                note.revisions.push(Revision { text, at_ms: line.t_ms, source });
            }
            other => return Err(bad(format!("line {n}: unknown record {other:?}"))),
        }
    }
    Ok(notes)
}

/// A whole session as stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionArchive {
    pub manifest: Manifest,
    pub transcript: Vec<TimedText>,
    /// Event log lines, verbatim.
    pub events: Vec<String>,
    pub notes: Vec<Note>,
    /// Notes log lines, verbatim.
    pub note_records: Vec<String>,
}

fn read(dir: &Path, file: &str) -> Result<String, StoreError> {
    Ok(fs::read_to_string(dir.join(file))?)
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}

impl SessionArchive {
    pub fn load(root: &Path, id: &str) -> Result<Self, StoreError> {
        validate_id(id)?;
        let dir = session_dir(root, id);
        if !dir.join("manifest").is_file() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Self::load_dir(&dir)
    }

    pub fn load_dir(dir: &Path) -> Result<Self, StoreError> {
        let manifest = Manifest::parse(&read(dir, "manifest")?)?;
        let transcript = transcript::parse_trace(&read(dir, "transcript.log")?)
            .map_err(|e| StoreError::Corrupt { file: "transcript.log", reason: e.to_string() })?;
        let events_text = read(dir, "events.log")?;
        let notes_text = read(dir, "notes.log")?;
        let mut archive = SessionArchive {
            manifest,
            transcript,
            events: lines(&events_text),
            notes: Vec::new(),
            note_records: lines(&notes_text),
        };
        archive.notes = parse_notes(&notes_text, &archive.sentences()?)?;
        Ok(archive)
    }

    pub fn entries(&self) -> Result<Vec<(usize, Entry)>, StoreError> {
        eventlog::parse_entries(&self.events_text())
            .map_err(|e| StoreError::Corrupt { file: "events.log", reason: e.to_string() })
    }

    pub fn sentences(&self) -> Result<BTreeMap<SentenceId, Sentence>, StoreError> {
        Ok(self
            .entries()?
            .into_iter()
            .filter_map(|(_, e)| match e.event {
                LogEvent::Sentence(s) => Some((s.id, s)),
                _ => None,
            })
            .collect())
    }

    pub fn events_text(&self) -> String {
        self.events.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn notes_text(&self) -> String {
        self.note_records.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Structured => self.to_json(),
            ExportFormat::PlainText => self.to_plain_text(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        serde_json::from_str(text).map_err(|e| StoreError::Corrupt { file: "structured export", reason: e.to_string() })
    }

    fn to_plain_text(&self) -> String {
        let mut out = format!("Session {}\nCreated at {} ms\n\nNotes ({})\n", self.manifest.id, self.manifest.created_at, self.notes.len());
        for (i, note) in self.notes.iter().enumerate() {
            out.push_str(&format!("{}. [{}] {}\n", i + 1, note.kind.as_str(), note.text));
            let words: Vec<String> = note.selection.iter().map(|k| format!("{} ({})", k.word, k.kind.as_str())).collect();
            out.push_str(&format!("   keywords: {}\n", words.join(", ")));
            for s in &note.transcripts {
                out.push_str(&format!("   transcript: {}\n", s.text));
            }
            if note.revisions.len() > 1 {
                for (r, rev) in note.revisions.iter().enumerate() {
                    out.push_str(&format!("   revision {}: {}\n", r + 1, rev.text));
                }
            }
        }
        out
    }

    /// Writes the archive as a fresh session directory under `root`.
    pub fn write(&self, root: &Path) -> Result<PathBuf, StoreError> {
        let mut w = ArchiveWriter::create(root, &self.manifest)?;
        let trace: String = self.transcript.iter().map(|t| format!("{}\n", TraceRecord(t))).collect();
        w.append_raw(&trace, &self.events_text(), &self.notes_text())?;
        Ok(session_dir(root, &self.manifest.id))
    }
}

type Sink = Box<dyn Write + Send>;

pub struct ArchiveWriter {
    transcript: Sink,
    events: Sink,
    notes: Sink,
    degraded: Option<String>,
}

impl ArchiveWriter {
    /// Creates `<root>/sessions/<id>` and writes the manifest.
    pub fn create(root: &Path, manifest: &Manifest) -> Result<Self, StoreError> {
        validate_id(&manifest.id)?;
        let dir = session_dir(root, &manifest.id);
        if dir.exists() {
            return Err(StoreError::Exists(manifest.id.clone()));
        }
        fs::create_dir_all(&dir)?;
        let mut f = File::create(dir.join("manifest"))?;
        f.write_all(manifest.to_text().as_bytes())?;
        f.sync_all()?;
        let open = |name: &str| -> io::Result<Sink> {
            Ok(Box::new(OpenOptions::new().create(true).append(true).open(dir.join(name))?))
        };
        Ok(Self::from_sinks(open("transcript.log")?, open("events.log")?, open("notes.log")?))
    }

    pub fn from_sinks(transcript: Sink, events: Sink, notes: Sink) -> Self {
        Self { transcript, events, notes, degraded: None }
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded.is_some()
    }

    pub fn append(&mut self, out: &Output) -> Result<(), StoreError> {
        let trace: String = out.transcript.iter().map(|t| format!("{}\n", TraceRecord(t))).collect();
        let events = eventlog::write_entries(&out.events);
        self.append_raw(&trace, &events, &notes_text(&out.notes))
    }

    fn append_raw(&mut self, trace: &str, events: &str, notes: &str) -> Result<(), StoreError> {
        if let Some(why) = &self.degraded {
            return Err(StoreError::Degraded(why.clone()));
        }
        let result = (|| -> io::Result<()> {
            for (sink, text) in [(&mut self.transcript, trace), (&mut self.events, events), (&mut self.notes, notes)] {
                if !text.is_empty() {
                    sink.write_all(text.as_bytes())?;
                    sink.flush()?;
                }
            }
            Ok(())
        })();
        result.map_err(|e| {
            self.degraded = Some(e.to_string());
            StoreError::Io(e)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Failing;

    impl Write for Failing {
        fn write(&mut self, _: &[u8]) -> io::Result<usize> {
            Err(io::Error::other("disk full"))
        }

        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    fn manifest(id: &str) -> Manifest {
        Manifest {
            id: id.into(),
            created_at: 0,
            backend: "mock".into(),
            model: None,
            customized: vec!["What".into(), "?".into()],
            templates: [("extraction".to_string(), "ab".repeat(32))].into_iter().collect(),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let m = manifest("demo");
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(m.to_text().contains("customized=What|%3F\n") || m.to_text().contains("customized=What|?\n"));
    }

    #[test]
    fn ids_are_path_safe() {
        assert!(validate_id("r-0123abcd").is_ok());
        for bad in ["", "../x", "a/b", "a b"] {
            assert!(validate_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn appends_keep_order_and_survive_reopen() {
        let root = tempfile::tempdir().unwrap();
        let mut w = ArchiveWriter::create(root.path(), &manifest("s1")).unwrap();
        let entry = |t, on| Entry::new(t, LogEvent::Touch { on });
        w.append(&Output { events: vec![entry(1, true)], ..Output::default() }).unwrap();
        w.append(&Output { events: vec![entry(2, false)], ..Output::default() }).unwrap();
        drop(w);
        let a = SessionArchive::load(root.path(), "s1").unwrap();
        assert_eq!(a.events, ["1\ttouch\ton=1", "2\ttouch\ton=0"]);
        assert!(a.notes.is_empty());
        assert!(matches!(ArchiveWriter::create(root.path(), &manifest("s1")), Err(StoreError::Exists(_))));
        assert!(matches!(SessionArchive::load(root.path(), "nope"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn write_failure_degrades() {
        let mut w = ArchiveWriter::from_sinks(Box::new(io::sink()), Box::new(Failing), Box::new(io::sink()));
        let out = Output { events: vec![Entry::new(0, LogEvent::Touch { on: true })], ..Output::default() };
        assert!(matches!(w.append(&out), Err(StoreError::Io(_))));
        assert!(w.is_degraded());
        assert!(matches!(w.append(&Output::default()), Err(StoreError::Degraded(_))));
    }

    #[test]
    fn empty_export() {
        let a = SessionArchive {
            manifest: manifest("e"),
            transcript: Vec::new(),
            events: Vec::new(),
            notes: Vec::new(),
            note_records: Vec::new(),
        };
        assert_eq!(a.export(ExportFormat::PlainText), "Session e\nCreated at 0 ms\n\nNotes (0)\n");
        assert_eq!(SessionArchive::from_json(&a.export(ExportFormat::Structured)).unwrap(), a);
    }
}
