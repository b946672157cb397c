use thiserror::Error;

use super::{KeywordList, CANDIDATE_COUNT};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("response contained no usable items")]
    EmptyResponse,
}

/// Removes a leading list marker: `1.`, `2)`, `-`, `*` or `•`.
fn strip_enumeration(line: &str) -> &str {
    let line = line.trim();
    for bullet in ['-', '*', '•'] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return rest.trim_start();
        }
    }
    line
}

/// One keyword per line, lowercased and de-duplicated.
pub fn parse_keyword_response(raw: &str) -> Result<KeywordList, ParseError> {
    let list = KeywordList::new(raw.lines().map(strip_enumeration));
    if list.is_empty() {
        return Err(ParseError::EmptyResponse);
    }
    Ok(list)
}

/// One sentence per non-blank line; the first three are kept.
pub fn parse_sentence_response(raw: &str) -> Result<Vec<String>, ParseError> {
    let sentences: Vec<String> = raw
        .lines()
        .map(strip_enumeration)
        .filter(|l| !l.is_empty())
        .take(CANDIDATE_COUNT)
        .map(str::to_string)
        .collect();
    if sentences.is_empty() {
        return Err(ParseError::EmptyResponse);
    }
    Ok(sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newline_keywords() {
        let k = parse_keyword_response("people\ncity\nrallies\nmeetings").unwrap();
        assert_eq!(k.words(), ["people", "city", "rallies", "meetings"]);
    }

    #[test]
    fn enumerations_stripped() {
        let k = parse_keyword_response("1. media\n2. civilization").unwrap();
        assert_eq!(k.words(), ["media", "civilization"]);
        let k = parse_keyword_response("- Media\n* media\n3) Sign\n\n").unwrap();
        assert_eq!(k.words(), ["media", "sign"]);
        let k = parse_keyword_response("2024\n1999s").unwrap();
        assert_eq!(k.words(), ["2024", "1999s"]);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(parse_keyword_response(""), Err(ParseError::EmptyResponse));
        assert_eq!(parse_keyword_response(" \n - \n"), Err(ParseError::EmptyResponse));
        assert_eq!(parse_sentence_response("\n\n"), Err(ParseError::EmptyResponse));
    }

    #[test]
    fn sentences_split_and_truncate() {
        let raw = "What city had the most impactful signs?\n\nWhat signs were displayed in each city?\n\nWhat city had the most controversial signs?";
        let s = parse_sentence_response(raw).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1], "What signs were displayed in each city?");
        let s = parse_sentence_response("1. a\n2. b\n3. c\n4. d\n5. e").unwrap();
        assert_eq!(s, ["a", "b", "c"]);
        assert_eq!(parse_sentence_response("only one.").unwrap().len(), 1);
    }

    proptest::proptest! {
        #[test]
        fn keyword_round_trip(words in proptest::collection::vec("[a-z][a-z']{0,10}", 1..8)) {
            let list = KeywordList::new(&words);
            let reparsed = parse_keyword_response(&list.to_response_text()).unwrap();
            proptest::prop_assert_eq!(reparsed, list);
        }
    }
}
