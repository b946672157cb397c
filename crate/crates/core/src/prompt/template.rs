//! Line-oriented prompt templates.
//!
//! Syntax:
//! - `{{name}}` is replaced by a value.
//! - A line that is exactly `{{#flag}}` opens a section and `{{/flag}}`
//!   closes it; the lines between are kept only when the flag is set.
//! - A line starting with `{{!` is a comment.
//!
//! Templates are parsed once and checked against the placeholder and
//! section names their kind expects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Extraction,
    DeriveExclusive,
    DeriveContextual,
    Organize,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::Extraction,
        PromptKind::DeriveExclusive,
        PromptKind::DeriveContextual,
        PromptKind::Organize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Extraction => "extraction",
            PromptKind::DeriveExclusive => "derive_exclusive",
            PromptKind::DeriveContextual => "derive_contextual",
            PromptKind::Organize => "organize",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            PromptKind::Extraction => &["new_speech_input"],
            PromptKind::DeriveExclusive => &["original_keyword", "currently_displaying_context_keywords"],
            PromptKind::DeriveContextual => {
                &["previous_speech", "original_keyword", "currently_displaying_context_keywords"]
            }
            PromptKind::Organize => &[
                "previous_speech",
                "selected_question_words",
                "question_words_in_customized_keywords",
                "selected_keywords",
            ],
        }
    }

    pub fn sections(self) -> &'static [&'static str] {
        match self {
            PromptKind::Organize => &["question_words", "question_mark", "fact"],
            _ => &[],
        }
    }

    fn shipped_source(self) -> &'static str {
        match self {
            PromptKind::Extraction => include_str!("../../assets/prompts/extraction.txt"),
            PromptKind::DeriveExclusive => include_str!("../../assets/prompts/derive_exclusive.txt"),
            PromptKind::DeriveContextual => include_str!("../../assets/prompts/derive_contextual.txt"),
            PromptKind::Organize => include_str!("../../assets/prompts/organize.txt"),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("{kind} template line {line}: {reason}")]
    Syntax { kind: PromptKind, line: usize, reason: String },
    #[error("{kind} template placeholders {found:?} do not match expected {expected:?}")]
    Placeholders { kind: PromptKind, found: Vec<String>, expected: Vec<String> },
    #[error("{kind} template sections {found:?} do not match expected {expected:?}")]
    Sections { kind: PromptKind, found: Vec<String>, expected: Vec<String> },
    #[error("reading {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Line(Vec<Piece>),
    Section(String, Vec<Node>),
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    kind: PromptKind,
    source: String,
    nodes: Vec<Node>,
}

impl PromptTemplate {
    pub fn parse(kind: PromptKind, source: &str) -> Result<Self, TemplateError> {
        let syntax = |line: usize, reason: String| TemplateError::Syntax { kind, line, reason };
        // Stack of (section name, children collected so far).
        let mut stack: Vec<(Option<String>, Vec<Node>)> = vec![(None, Vec::new())];
        let mut vars = BTreeSet::new();
        let mut sections = BTreeSet::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.starts_with("{{!") {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix("{{#").and_then(|r| r.strip_suffix("}}")) {
                sections.insert(name.to_string());
                stack.push((Some(name.to_string()), Vec::new()));
                continue;
            }
            if let Some(name) = trimmed.strip_prefix("{{/").and_then(|r| r.strip_suffix("}}")) {
                let (open, children) = stack.pop().expect("root frame");
                match open {
                    Some(open) if open == name => {}
                    Some(open) => return Err(syntax(line_no, format!("closing {name} while {open} is open"))),
                    None => return Err(syntax(line_no, format!("closing {name} with no open section"))),
                }
                stack.last_mut().expect("root frame").1.push(Node::Section(name.to_string(), children));
                continue;
            }
            let pieces = parse_line(line).map_err(|r| syntax(line_no, r))?;
            for p in &pieces {
                if let Piece::Var(v) = p {
                    vars.insert(v.clone());
                }
            }
            stack.last_mut().expect("root frame").1.push(Node::Line(pieces));
        }
        if stack.len() != 1 {
            let open = stack.last().and_then(|f| f.0.clone()).unwrap_or_default();
            return Err(syntax(source.lines().count(), format!("section {open} never closed")));
        }
        let expected: BTreeSet<String> = kind.placeholders().iter().map(|s| s.to_string()).collect();
        if vars != expected {
            return Err(TemplateError::Placeholders {
                kind,
                found: vars.into_iter().collect(),
                expected: expected.into_iter().collect(),
            });
        }
        let expected: BTreeSet<String> = kind.sections().iter().map(|s| s.to_string()).collect();
        if sections != expected {
            return Err(TemplateError::Sections {
                kind,
                found: sections.into_iter().collect(),
                expected: expected.into_iter().collect(),
            });
        }
        let nodes = stack.pop().expect("root frame").1;
        Ok(Self { kind, source: source.to_string(), nodes })
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Hex SHA-256 of the template source, recorded in session archives.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    /// Renders with `values` for placeholders and `flags` for sections.
    /// Missing values render empty. Output lines end with `\n` except the last.
    pub fn render(&self, values: &BTreeMap<&str, String>, flags: &BTreeSet<&str>) -> String {
        let mut lines = Vec::new();
        render_nodes(&self.nodes, values, flags, &mut lines);
        lines.join("\n")
    }
}

fn render_nodes(
    nodes: &[Node],
    values: &BTreeMap<&str, String>,
    flags: &BTreeSet<&str>,
    out: &mut Vec<String>,
) {
    for node in nodes {
        match node {
            Node::Line(pieces) => {
                let mut line = String::new();
                for p in pieces {
                    match p {
                        Piece::Text(t) => line.push_str(t),
                        Piece::Var(v) => line.push_str(values.get(v.as_str()).map_or("", String::as_str)),
                    }
                }
                out.push(line);
            }
            Node::Section(name, children) => {
                if flags.contains(name.as_str()) {
                    render_nodes(children, values, flags, out);
                }
            }
        }
    }
}

fn parse_line(line: &str) -> Result<Vec<Piece>, String> {
    let mut pieces = Vec::new();
    let mut rest = line;
    while let Some(open) = rest.find("{{") {
        if open > 0 {
            pieces.push(Piece::Text(rest[..open].to_string()));
        }
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| "unterminated placeholder".to_string())?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(format!("invalid placeholder name {name:?}"));
        }
        pieces.push(Piece::Var(name.to_string()));
        rest = &after[close + 2..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    Ok(pieces)
}

/// The four templates a session renders with.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, PromptTemplate>,
}

impl PromptSet {
    pub fn shipped() -> Self {
        Self::from_sources(|kind| Ok(kind.shipped_source().to_string())).expect("shipped templates are valid")
    }

    /// Loads `<kind>.txt` for every kind from `dir`.
    pub fn from_dir(dir: &std::path::Path) -> Result<Self, TemplateError> {
        Self::from_sources(|kind| {
            let path = dir.join(kind.file_name());
            std::fs::read_to_string(&path)
                .map_err(|e| TemplateError::Io { path: path.display().to_string(), reason: e.to_string() })
        })
    }

    fn from_sources(
        mut load: impl FnMut(PromptKind) -> Result<String, TemplateError>,
    ) -> Result<Self, TemplateError> {
        let mut templates = BTreeMap::new();
        for kind in PromptKind::ALL {
            let source = load(kind)?;
            templates.insert(kind, PromptTemplate::parse(kind, &source)?);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, kind: PromptKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    pub fn hashes(&self) -> BTreeMap<PromptKind, String> {
        self.templates.iter().map(|(k, t)| (*k, t.hash())).collect()
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::shipped()
    }
}
