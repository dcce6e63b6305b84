//! Response grammar for the classifier.
//!
//! ```text
//! response    := ws* class-token description directive trailer
//! class-token := "HAZARDOUS:" | "CONFLICT:" | "CLEAR:"      (ASCII case-insensitive)
//! directive   := "REPORT" | "AVOID" | "RESUME"               (uppercase, whole word)
//! ```
//!
//! The description runs up to the first directive token; quotes, trailing
//! punctuation and a dangling "and" are trimmed from it. Every directive
//! token in the response must agree, and the directive must be the one
//! paired with the class.

use super::{AnomalyClass, Directive, ParsedClassification, PerceptionError};

pub fn parse_response(raw: &str) -> Result<ParsedClassification, PerceptionError> {
    parse(raw).ok_or_else(|| PerceptionError::UnparsedResponse { raw: raw.to_owned() })
}

fn parse(raw: &str) -> Option<ParsedClassification> {
    let text = raw.trim_start();
    let (class, rest) = AnomalyClass::ALL.into_iter().find_map(|class| {
        let token = class.token();
        let head = text.get(..token.len() + 1)?.as_bytes();
        let matches = head[token.len()] == b':' && head[..token.len()].eq_ignore_ascii_case(token.as_bytes());
        matches.then(|| (class, &text[token.len() + 1..]))
    })?;

    let tokens = directive_tokens(rest);
    let &(first_at, directive) = tokens.first()?;
    if tokens.iter().any(|&(_, d)| d != directive) {
        return None;
    }
    let description = clean_description(&rest[..first_at]);
    if description.is_empty() {
        return None;
    }
    ParsedClassification::new(class, description, directive)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte offsets of whole-word directive tokens.
fn directive_tokens(text: &str) -> Vec<(usize, Directive)> {
    let mut found = Vec::new();
    let mut prev: Option<char> = None;
    for (i, c) in text.char_indices() {
        if prev.is_none_or(|p| !is_word_char(p)) {
            for directive in Directive::ALL {
                let token = directive.token();
                if text[i..].starts_with(token)
                    && text[i + token.len()..].chars().next().is_none_or(|n| !is_word_char(n))
                {
                    found.push((i, directive));
                }
            }
        }
        prev = Some(c);
    }
    found
}

fn clean_description(text: &str) -> String {
    let junk = |c: char| c.is_whitespace() || matches!(c, '\'' | '"' | ',' | '.' | ';' | ':' | '-');
    let mut s = text.trim_matches(junk);
    loop {
        let lower_tail = s.len().checked_sub(4).and_then(|i| s.get(i..));
        match lower_tail {
            Some(tail) if tail.eq_ignore_ascii_case(" and") => {
                s = s[..s.len() - 4].trim_end_matches(junk);
            }
            _ if s.eq_ignore_ascii_case("and") => s = "",
            _ => break,
        }
    }
    s.to_owned()
}
