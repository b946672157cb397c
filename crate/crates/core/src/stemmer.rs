//! Deterministic lemma equivalence for validating LLM output.
//!
//! Porter's suffix-stripping algorithm. The suffix tables for steps 1a, 1b,
//! 2, 3 and 4 are data (`assets/stemmer_rules.txt`); the structural parts
//! (the 1b fix-ups, 1c and 5) are code. Two words share a lemma when they
//! reduce to the same stem, so `talk`, `talking`, `talked` and `talks` are
//! all equivalent.

use std::sync::OnceLock;

use thiserror::Error;

const DEFAULT_RULES: &str = include_str!("../assets/stemmer_rules.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule table line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    S1a,
    S1b,
    S2,
    S3,
    S4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Condition {
    Always,
    MeasureAbove0,
    MeasureAbove1,
    HasVowel,
    MeasureAbove1EndsST,
}

#[derive(Debug, Clone)]
struct Rule {
    suffix: Vec<u8>,
    replacement: Vec<u8>,
    condition: Condition,
}

#[derive(Debug, Clone, Default)]
pub struct Stemmer {
    step1a: Vec<Rule>,
    step1b: Vec<Rule>,
    step2: Vec<Rule>,
    step3: Vec<Rule>,
    step4: Vec<Rule>,
}

impl Stemmer {
    pub fn from_rules(table: &str) -> Result<Self, RuleError> {
        let mut stemmer = Stemmer::default();
        for (idx, raw) in table.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| RuleError::Malformed {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(malformed("expected 4 columns"));
            }
            let step = match cols[0] {
                "1a" => Step::S1a,
                "1b" => Step::S1b,
                "2" => Step::S2,
                "3" => Step::S3,
                "4" => Step::S4,
                other => return Err(malformed(&format!("unknown step {other}"))),
            };
            let condition = match cols[3] {
                "-" => Condition::Always,
                "m>0" => Condition::MeasureAbove0,
                "m>1" => Condition::MeasureAbove1,
                "v" => Condition::HasVowel,
                "m>1st" => Condition::MeasureAbove1EndsST,
                other => return Err(malformed(&format!("unknown condition {other}"))),
            };
            let replacement = if cols[2] == "~" { "" } else { cols[2] };
            let rule = Rule {
                suffix: cols[1].as_bytes().to_vec(),
                replacement: replacement.as_bytes().to_vec(),
                condition,
            };
            match step {
                Step::S1a => stemmer.step1a.push(rule),
                Step::S1b => stemmer.step1b.push(rule),
                Step::S2 => stemmer.step2.push(rule),
                Step::S3 => stemmer.step3.push(rule),
                Step::S4 => stemmer.step4.push(rule),
            }
        }
        Ok(stemmer)
    }

    /// The stemmer built from the shipped rule table.
    pub fn shipped() -> &'static Stemmer {
        static SHIPPED: OnceLock<Stemmer> = OnceLock::new();
        SHIPPED.get_or_init(|| Stemmer::from_rules(DEFAULT_RULES).expect("shipped rule table parses"))
    }

    /// Stems a word. Input is lowercased first; words that are not plain
    /// ASCII letters, or are two letters or shorter, come back unchanged.
    pub fn stem(&self, word: &str) -> String {
        let lower = word.to_lowercase();
        if lower.len() <= 2 || !lower.bytes().all(|b| b.is_ascii_lowercase()) {
            return lower;
        }
        let mut w = lower.into_bytes();
        self.apply_step(&mut w, Step::S1a);
        self.step1b(&mut w);
        step1c(&mut w);
        self.apply_step(&mut w, Step::S2);
        self.apply_step(&mut w, Step::S3);
        self.apply_step(&mut w, Step::S4);
        step5(&mut w);
        String::from_utf8(w).expect("ascii in, ascii out")
    }

    pub fn same_lemma(&self, a: &str, b: &str) -> bool {
        self.stem(a) == self.stem(b)
    }

    fn rules(&self, step: Step) -> &[Rule] {
        match step {
            Step::S1a => &self.step1a,
            Step::S1b => &self.step1b,
            Step::S2 => &self.step2,
            Step::S3 => &self.step3,
            Step::S4 => &self.step4,
        }
    }

    /// Applies the first matching rule of `step`. Returns the rule when it
    /// matched and its condition held.
    fn apply_step(&self, w: &mut Vec<u8>, step: Step) -> Option<&Rule> {
        let rule = self.rules(step).iter().find(|r| w.ends_with(&r.suffix))?;
        let stem_len = w.len() - rule.suffix.len();
        if !holds(rule.condition, &w[..stem_len]) {
            return None;
        }
        w.truncate(stem_len);
        w.extend_from_slice(&rule.replacement);
        Some(rule)
    }

    fn step1b(&self, w: &mut Vec<u8>) {
        let Some(rule) = self.apply_step(w, Step::S1b) else {
            return;
        };
        if rule.suffix == b"eed" {
            return;
        }
        if w.ends_with(b"at") || w.ends_with(b"bl") || w.ends_with(b"iz") {
            w.push(b'e');
        } else if ends_double_consonant(w) && !matches!(w.last(), Some(b'l' | b's' | b'z')) {
            w.pop();
        } else if measure(w) == 1 && ends_cvc(w) {
            w.push(b'e');
        }
    }
}

pub fn stem(word: &str) -> String {
    Stemmer::shipped().stem(word)
}

/// True iff both words reduce to the same stem under the shipped rules.
pub fn same_lemma(a: &str, b: &str) -> bool {
    Stemmer::shipped().same_lemma(a, b)
}

fn holds(condition: Condition, stem: &[u8]) -> bool {
    match condition {
        Condition::Always => true,
        Condition::MeasureAbove0 => measure(stem) > 0,
        Condition::MeasureAbove1 => measure(stem) > 1,
        Condition::HasVowel => has_vowel(stem),
        Condition::MeasureAbove1EndsST => {
            measure(stem) > 1 && matches!(stem.last(), Some(b's' | b't'))
        }
    }
}

fn step1c(w: &mut [u8]) {
    let n = w.len();
    if n > 1 && w[n - 1] == b'y' && has_vowel(&w[..n - 1]) {
        w[n - 1] = b'i';
    }
}

fn step5(w: &mut Vec<u8>) {
    if w.last() == Some(&b'e') {
        let stem = &w[..w.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            w.pop();
        }
    }
    if w.ends_with(b"ll") && measure(w) > 1 {
        w.pop();
    }
}

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel-consonant sequences, the `m` in `[C](VC)^m[V]`.
fn measure(w: &[u8]) -> usize {
    let n = w.len();
    let mut i = 0;
    while i < n && is_consonant(w, i) {
        i += 1;
    }
    let mut m = 0;
    loop {
        while i < n && !is_consonant(w, i) {
            i += 1;
        }
        if i >= n {
            return m;
        }
        while i < n && is_consonant(w, i) {
            i += 1;
        }
        m += 1;
    }
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

/// consonant-vowel-consonant ending where the last consonant is not w, x or y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}
