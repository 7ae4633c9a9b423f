use std::fmt;

use serde::{Deserialize, Serialize};

/// Case-folds one word for matching.
///
/// Uppercasing first maps `ß` to `SS`, so `straße`, `STRASSE` and `Strasse`
/// all fold to `strasse`. Plain lowercasing would make matching depend on
/// the case of the input.
pub fn fold(word: &str) -> String {
    word.to_uppercase().to_lowercase()
}

/// Splits text into maximal runs of Unicode letters and case-folds each run.
///
/// Digits, punctuation, whitespace, `#` and `@` all separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    letter_runs(text).map(fold).collect()
}

fn letter_runs(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|run| !run.is_empty())
}

/// One dictionary term in one category.
///
/// `surface` is the lowercase display form (`öffentlicher dienst`, `tot*`);
/// `tokens` are the folded words used for matching, without the `*`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub category: String,
    pub surface: String,
    pub tokens: Vec<String>,
    pub wildcard: bool,
}

impl LexiconEntry {
    pub fn parse(category: &str, raw: &str) -> Result<Self, TermError> {
        let term = ParsedTerm::parse(raw)?;
        Ok(LexiconEntry {
            category: category.to_string(),
            surface: term.surface,
            tokens: term.tokens,
            wildcard: term.wildcard,
        })
    }

    pub fn is_phrase(&self) -> bool {
        self.tokens.len() > 1
    }

    /// The part of the entry that determines what it matches.
    pub fn match_key(&self) -> (&[String], bool) {
        (&self.tokens, self.wildcard)
    }

    /// Does this entry's final word accept `token`?
    pub(crate) fn last_accepts(&self, token: &str) -> bool {
        let last = self.tokens.last().expect("entries have at least one token");
        if self.wildcard {
            token.starts_with(last.as_str())
        } else {
            token == last
        }
    }
}

impl fmt::Display for LexiconEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category, self.surface)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TermError {
    #[error("empty term")]
    Empty,
    #[error("`*` is only allowed as the last character of a term")]
    EmbeddedWildcard,
    #[error("wildcard without a stem")]
    EmptyStem,
    #[error("non-letter character {0:?} in term")]
    NonLetter(char),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParsedTerm {
    pub surface: String,
    pub tokens: Vec<String>,
    pub wildcard: bool,
}

impl ParsedTerm {
    pub fn parse(raw: &str) -> Result<Self, TermError> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(TermError::Empty);
        }
        let (body, wildcard) = match raw.strip_suffix('*') {
            Some(body) => (body, true),
            None => (raw, false),
        };
        if body.contains('*') {
            return Err(TermError::EmbeddedWildcard);
        }
        if wildcard && body.chars().last().is_none_or(char::is_whitespace) {
            return Err(TermError::EmptyStem);
        }
        if let Some(bad) = body
            .chars()
            .find(|c| !c.is_alphabetic() && !c.is_whitespace())
        {
            return Err(TermError::NonLetter(bad));
        }
        let words: Vec<&str> = body.split_whitespace().collect();
        let tokens: Vec<String> = words.iter().map(|w| fold(w)).collect();
        if tokens.is_empty() || tokens.iter().any(String::is_empty) {
            return Err(TermError::Empty);
        }
        let mut surface = words
            .iter()
            .map(|w| w.to_lowercase())
            .collect::<Vec<_>>()
            .join(" ");
        if wildcard {
            surface.push('*');
        }
        Ok(ParsedTerm {
            surface,
            tokens,
            wildcard,
        })
    }
}
