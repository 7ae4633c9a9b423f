//! Category lexica: loading, exclusion cleaning and compiled matching.
//!
//! A lexicon is a set of category files, one term per line. A trailing `*`
//! turns a term into a prefix wildcard (`panik*` matches `panik`, `panikmache`);
//! inner whitespace makes a phrase (`öffentlicher dienst`).

mod entry;
mod exclusions;
mod matcher;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use entry::{fold, tokenize, LexiconEntry, TermError};
pub use exclusions::{apply_exclusions, ExclusionList, ExclusionReport, Removal};
pub use matcher::{compile_matcher, match_post, EntryId, MatchResult, Matcher};

/// Categories every full monitoring configuration must provide.
pub const CORE_CATEGORIES: [&str; 6] = ["anxiety", "anger", "sadness", "posemo", "social", "prosocial"];

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8 (first bad byte at offset {offset})")]
    NotUtf8 { path: PathBuf, offset: usize },
    #[error("cannot derive a category id from {0}")]
    BadCategoryName(PathBuf),
    #[error("malformed lexicon lines:{}", list(.0))]
    Malformed(Vec<LineDiagnostic>),
    #[error("duplicate lexicon entries:{}", list(.0))]
    Duplicates(Vec<Duplicate>),
    #[error("lexicon has no entries")]
    Empty,
}

fn list<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| format!("\n  {i}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineDiagnostic {
    pub source: String,
    pub line: usize,
    pub text: String,
    pub error: TermError,
}

impl fmt::Display for LineDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {} ({:?})", self.source, self.line, self.error, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Duplicate {
    pub category: String,
    pub surface: String,
    pub first_line: usize,
    pub line: usize,
}

impl fmt::Display for Duplicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} on line {} repeats line {}",
            self.category, self.surface, self.line, self.first_line
        )
    }
}

/// A loaded set of categories.
///
/// `version` hashes the raw category files; exclusion passes add to a
/// separate digest so that cleaning never changes the content version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    categories: BTreeMap<String, Vec<LexiconEntry>>,
    blocked: BTreeMap<String, BTreeSet<String>>,
    version: String,
    exclusion_digest: Option<String>,
}

impl Lexicon {
    /// Builds a lexicon from in-memory category sources, in the same line
    /// format as the files.
    pub fn from_sources<'a, I>(sources: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let sources: Vec<(String, String, String)> = sources
            .into_iter()
            .map(|(cat, text)| (cat.to_string(), cat.to_string(), text.to_string()))
            .collect();
        Self::build(sources)
    }

    fn build(mut sources: Vec<(String, String, String)>) -> Result<Self, LexiconError> {
        sources.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.2.cmp(&b.2)));

        let mut hasher = Sha256::new();
        let mut categories: BTreeMap<String, Vec<LexiconEntry>> = BTreeMap::new();
        let mut seen: BTreeMap<(String, Vec<String>, bool), (String, usize)> = BTreeMap::new();
        let mut malformed = Vec::new();
        let mut duplicates = Vec::new();

        for (category, label, text) in &sources {
            hasher.update(category.as_bytes());
            hasher.update([0]);
            hasher.update(text.as_bytes());
            hasher.update([0]);

            let bucket = categories.entry(category.clone()).or_default();
            for (idx, line) in text.lines().enumerate() {
                let lineno = idx + 1;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                match LexiconEntry::parse(category, trimmed) {
                    Ok(entry) => {
                        let key = (category.clone(), entry.tokens.clone(), entry.wildcard);
                        if let Some((surface, first_line)) = seen.get(&key) {
                            duplicates.push(Duplicate {
                                category: category.clone(),
                                surface: surface.clone(),
                                first_line: *first_line,
                                line: lineno,
                            });
                        } else {
                            seen.insert(key, (entry.surface.clone(), lineno));
                            bucket.push(entry);
                        }
                    }
                    Err(error) => malformed.push(LineDiagnostic {
                        source: label.clone(),
                        line: lineno,
                        text: trimmed.to_string(),
                        error,
                    }),
                }
            }
        }

        if !malformed.is_empty() {
            return Err(LexiconError::Malformed(malformed));
        }
        if !duplicates.is_empty() {
            return Err(LexiconError::Duplicates(duplicates));
        }
        for entries in categories.values_mut() {
            entries.sort();
        }
        Ok(Lexicon {
            categories,
            blocked: BTreeMap::new(),
            version: hex::encode(hasher.finalize()),
            exclusion_digest: None,
        })
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.contains_key(category)
    }

    pub fn entries(&self, category: &str) -> &[LexiconEntry] {
        self.categories.get(category).map_or(&[], Vec::as_slice)
    }

    pub fn all_entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.categories.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.categories.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Words that wildcard entries of `category` must not match.
    pub fn blocked_words(&self, category: &str) -> impl Iterator<Item = &str> {
        self.blocked.get(category).into_iter().flatten().map(String::as_str)
    }

    /// Hash of the raw category files.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn exclusion_digest(&self) -> Option<&str> {
        self.exclusion_digest.as_deref()
    }

    /// Identifies the effective term set: content version plus exclusions.
    pub fn fingerprint(&self) -> String {
        match &self.exclusion_digest {
            None => self.version.clone(),
            Some(d) => {
                let mut h = Sha256::new();
                h.update(self.version.as_bytes());
                h.update(b"/");
                h.update(d.as_bytes());
                hex::encode(h.finalize())
            }
        }
    }

    /// Core categories absent from this lexicon.
    pub fn missing_core_categories(&self) -> Vec<&'static str> {
        CORE_CATEGORIES
            .iter()
            .copied()
            .filter(|c| !self.has_category(c))
            .collect()
    }
}

/// Loads category files; each file's stem names its category.
pub fn load_lexicon<P: AsRef<Path>>(paths: &[P]) -> Result<Lexicon, LexiconError> {
    let mut sources = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let category = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| LexiconError::BadCategoryName(path.to_path_buf()))?;
        let text = read_utf8(path)?;
        sources.push((category.to_string(), path.display().to_string(), text));
    }
    Lexicon::build(sources)
}

/// Loads every `*.txt` file in `dir` as a category.
pub fn load_lexicon_dir(dir: &Path) -> Result<Lexicon, LexiconError> {
    let io = |source| LexiconError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            paths.push(path);
        }
    }
    paths.sort();
    load_lexicon(&paths)
}

pub(crate) fn read_utf8(path: &Path) -> Result<String, LexiconError> {
    let bytes = fs::read(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| LexiconError::NotUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}
