//! Word boundaries and whitespace normalization shared by the segmenter,
//! the validators and the mock backend.
//!
//! A token is a maximal run of letters, digits or apostrophes. Everything
//! else (whitespace, punctuation, symbols) separates tokens. Comparisons are
//! case-insensitive; callers lowercase with [`tokens_lower`].

/// Returns true for characters that belong inside a token.
pub fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

/// Splits `text` into tokens, preserving case.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !is_token_char(c))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '\u{2019}'))
        .filter(|t| !t.is_empty())
}

/// Lowercased tokens of `text`.
pub fn tokens_lower(text: &str) -> Vec<String> {
    tokens(text).map(str::to_lowercase).collect()
}

/// Number of words, used for the candidate sentence length limit.
pub fn word_count(text: &str) -> usize {
    tokens(text).count()
}

/// Collapses runs of whitespace to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for part in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

/// True if the trimmed text ends with `.`, `?` or `!`. Closing quotes and
/// brackets after the mark are tolerated.
pub fn ends_with_terminal_punctuation(text: &str) -> bool {
    let trimmed = text
        .trim_end()
        .trim_end_matches(['"', '\'', '\u{201d}', '\u{2019}', ')', ']']);
    trimmed.ends_with(['.', '?', '!'])
}

/// 64-bit FNV-1a. Stable across processes and platforms, unlike
/// `std::collections::hash_map::DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
