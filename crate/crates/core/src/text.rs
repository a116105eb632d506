//! Character spans and label normalization.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-open span in Unicode scalar values (not bytes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("span {span} is invalid for a text of {len} characters")]
pub struct SpanError {
    pub span: CharSpan,
    pub len: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    /// Byte range of a non-empty, in-bounds span.
    pub fn byte_range(&self, text: &str) -> Result<Range<usize>, SpanError> {
        let len = text.chars().count();
        if self.start >= self.end || self.end > len {
            return Err(SpanError { span: *self, len });
        }
        let offset = |n: usize| {
            text.char_indices()
                .nth(n)
                .map(|(b, _)| b)
                .unwrap_or(text.len())
        };
        Ok(offset(self.start)..offset(self.end))
    }

    pub fn slice<'a>(&self, text: &'a str) -> Result<&'a str, SpanError> {
        self.byte_range(text).map(|r| &text[r])
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
];

fn singularize_once(word: &str) -> String {
    if let Some(&(_, singular)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == word) {
        return singular.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if stem.len() > 1 {
            return format!("{stem}y");
        }
    }
    if word.ends_with("ses") && word.len() > 4 {
        return word[..word.len() - 2].to_string();
    }
    if word.len() > 3
        && word.ends_with('s')
        && !(word.ends_with("ss") || word.ends_with("us") || word.ends_with("is"))
    {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Rule-based English singularization, applied to a fixpoint so that it is
/// idempotent.
pub fn singularize(word: &str) -> String {
    let mut current = word.to_string();
    loop {
        let next = singularize_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Turns a raw model token into a candidate label.
///
/// Returns `None` for word-piece continuations (`##s`), punctuation, digits,
/// and anything else that is not purely alphabetic.
pub fn normalize_label(token: &str) -> Option<String> {
    let token = token.trim();
    // SentencePiece / byte-level BPE word-start markers.
    let token = token
        .strip_prefix('\u{2581}')
        .or_else(|| token.strip_prefix('\u{120}'))
        .unwrap_or(token);
    if token.is_empty() || !token.chars().all(char::is_alphabetic) {
        return None;
    }
    Some(singularize(&token.to_lowercase()))
}

/// Key under which a type name is matched against candidate labels.
pub fn type_name_key(name: &str) -> String {
    singularize(&name.to_lowercase())
}

/// Splits a label or type name into embedding lookup words.
pub fn words(term: &str) -> Vec<String> {
    term.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn span_slicing_uses_characters() {
        let s = "Caf\u{e9} Wrigley Field.";
        let span = CharSpan::new(5, 18);
        assert_eq!(span.slice(s).unwrap(), "Wrigley Field");
        assert!(CharSpan::new(3, 3).slice(s).is_err());
        assert!(CharSpan::new(0, 100).slice(s).is_err());
    }

    #[test]
    fn singular_forms() {
        let cases = [
            ("stadiums", "stadium"),
            ("venues", "venue"),
            ("locations", "location"),
            ("games", "game"),
            ("cities", "city"),
            ("buses", "bus"),
            ("classes", "class"),
            ("people", "person"),
            ("women", "woman"),
            ("business", "business"),
            ("status", "status"),
            ("gas", "gas"),
            ("stadium", "stadium"),
        ];
        for (plural, single) in cases {
            assert_eq!(singularize(plural), single, "{plural}");
        }
    }

    #[test]
    fn label_filter() {
        assert_eq!(normalize_label("Stadiums").as_deref(), Some("stadium"));
        assert_eq!(normalize_label("##s"), None);
        assert_eq!(normalize_label(","), None);
        assert_eq!(normalize_label("1990s"), None);
        assert_eq!(normalize_label("\u{120}Teams").as_deref(), Some("team"));
        assert_eq!(normalize_label(""), None);
    }

    #[test]
    fn words_split_underscores() {
        assert_eq!(words("sports_team"), vec!["sports", "team"]);
        assert_eq!(words("Political  Figure"), vec!["political", "figure"]);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "[A-Za-z]{1,12}") {
            let once = normalize_label(&raw).unwrap();
            prop_assert_eq!(normalize_label(&once), Some(once.clone()));
            prop_assert_eq!(singularize(&once), once);
        }
    }
}
