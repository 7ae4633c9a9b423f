use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::entry::ParsedTerm;
use super::{read_utf8, Lexicon, LexiconError, LineDiagnostic, TermError};

/// One `(category, term)` pair to drop from a lexicon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Removal {
    pub category: String,
    pub term: String,
}

/// Terms removed from the lexica before scoring.
///
/// The file format is one `category<TAB>term` pair per line; `#` comments
/// and blank lines are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExclusionList {
    pub removals: Vec<Removal>,
}

impl ExclusionList {
    pub fn new<I, C, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (C, T)>,
        C: Into<String>,
        T: Into<String>,
    {
        ExclusionList {
            removals: pairs
                .into_iter()
                .map(|(c, t)| Removal {
                    category: c.into(),
                    term: t.into(),
                })
                .collect(),
        }
    }

    pub fn parse(source: &str, text: &str) -> Result<Self, LexiconError> {
        let mut removals = Vec::new();
        let mut malformed = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((cat, term)) if !cat.trim().is_empty() && !term.trim().is_empty() => {
                    removals.push(Removal {
                        category: cat.trim().to_string(),
                        term: term.trim().to_string(),
                    })
                }
                _ => malformed.push(LineDiagnostic {
                    source: source.to_string(),
                    line: idx + 1,
                    text: trimmed.to_string(),
                    error: TermError::Empty,
                }),
            }
        }
        if malformed.is_empty() {
            Ok(ExclusionList { removals })
        } else {
            Err(LexiconError::Malformed(malformed))
        }
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = read_utf8(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn is_empty(&self) -> bool {
        self.removals.is_empty()
    }

    pub fn extend(&mut self, other: &ExclusionList) {
        self.removals.extend(other.removals.iter().cloned());
    }

    fn digest(&self) -> String {
        let mut lines: Vec<String> = self
            .removals
            .iter()
            .map(|r| format!("{}\t{}", r.category, r.term))
            .collect();
        lines.sort();
        let mut h = Sha256::new();
        for l in lines {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// What an exclusion pass changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExclusionReport {
    /// Entries dropped, per category.
    pub removed: BTreeMap<String, usize>,
    /// Words now ignored by the category's wildcard entries, per category.
    pub blocked: BTreeMap<String, Vec<String>>,
    /// Removals that matched nothing in the lexicon.
    pub unresolved: Vec<(String, String)>,
}

/// Removes the listed terms.
///
/// A removal naming an entry deletes it. A removal naming a single word that
/// is not an entry but is covered by one of the category's wildcard entries
/// (`klagenfurt` under `klagen*`) blocks that word for the category instead.
/// Anything else is reported as unresolved and logged.
pub fn apply_exclusions(lex: &Lexicon, excl: &ExclusionList) -> (Lexicon, ExclusionReport) {
    let mut out = lex.clone();
    let mut report = ExclusionReport::default();

    for removal in &excl.removals {
        let unresolved = || (removal.category.clone(), removal.term.clone());
        let Ok(term) = ParsedTerm::parse(&removal.term) else {
            report.unresolved.push(unresolved());
            continue;
        };
        let Some(entries) = out.categories.get_mut(&removal.category) else {
            report.unresolved.push(unresolved());
            continue;
        };
        if let Some(pos) = entries
            .iter()
            .position(|e| e.tokens == term.tokens && e.wildcard == term.wildcard)
        {
            entries.remove(pos);
            *report.removed.entry(removal.category.clone()).or_default() += 1;
            continue;
        }
        let word = match term.tokens.as_slice() {
            [w] if !term.wildcard => w,
            _ => {
                report.unresolved.push(unresolved());
                continue;
            }
        };
        let covered = entries
            .iter()
            .any(|e| e.wildcard && !e.is_phrase() && e.last_accepts(word));
        if covered {
            let newly = out
                .blocked
                .entry(removal.category.clone())
                .or_default()
                .insert(word.clone());
            if newly {
                report
                    .blocked
                    .entry(removal.category.clone())
                    .or_default()
                    .push(word.clone());
            }
        } else {
            report.unresolved.push(unresolved());
        }
    }

    for (cat, term) in &report.unresolved {
        log::warn!("exclusion {cat}\t{term} does not resolve against the lexicon");
    }

    let digest = excl.digest();
    out.exclusion_digest = Some(match &lex.exclusion_digest {
        None => digest,
        Some(prev) => {
            let mut h = Sha256::new();
            h.update(prev.as_bytes());
            h.update(b"+");
            h.update(digest.as_bytes());
            hex::encode(h.finalize())
        }
    });
    (out, report)
}
