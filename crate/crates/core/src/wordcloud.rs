//! Comparative word-cloud weights between a monitoring corpus and a
//! reference corpus.
//!
//! Each lexicon entry present at least `min_count` times in both corpora
//! gets weight `|ln(p_live / p_base)|`, where `p` is the entry's share of
//! all matches of its category in that corpus.

use std::collections::BTreeMap;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::lexicon::{LexiconEntry, MatchResult, Matcher};

/// Default occurrence threshold in both corpora.
pub const DEFAULT_MIN_COUNT: u64 = 10;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CloudError {
    #[error("corpora were matched with different lexica ({live} vs {base})")]
    LexiconMismatch { live: String, base: String },
    #[error("category mismatch: {live} vs {base}")]
    CategoryMismatch { live: String, base: String },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("min_count must be at least 1")]
    ZeroMinCount,
}

/// Per-entry match totals of one category in one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTermStats {
    pub corpus_id: String,
    pub category: String,
    /// Fingerprint of the lexicon the counts came from.
    pub lexicon: String,
    pub counts: BTreeMap<LexiconEntry, u64>,
    pub category_total: u64,
}

impl CorpusTermStats {
    pub fn count(&self, entry: &LexiconEntry) -> u64 {
        self.counts.get(entry).copied().unwrap_or(0)
    }

    /// Stats built from explicit counts; entries with count 0 are dropped.
    pub fn from_counts(
        corpus_id: impl Into<String>,
        category: impl Into<String>,
        lexicon: impl Into<String>,
        counts: impl IntoIterator<Item = (LexiconEntry, u64)>,
    ) -> Self {
        let counts: BTreeMap<LexiconEntry, u64> = counts.into_iter().filter(|(_, n)| *n > 0).collect();
        CorpusTermStats {
            corpus_id: corpus_id.into(),
            category: category.into(),
            lexicon: lexicon.into(),
            category_total: counts.values().sum(),
            counts,
        }
    }
}

/// Sums per-entry counts of `category` over a corpus matched by `matcher`.
pub fn term_stats<'a>(
    matcher: &Matcher,
    matched: impl IntoIterator<Item = &'a MatchResult>,
    category: &str,
    corpus_id: &str,
) -> Result<CorpusTermStats, CloudError> {
    if !matcher.has_category(category) {
        return Err(CloudError::UnknownCategory(category.to_string()));
    }
    let mut counts: BTreeMap<LexiconEntry, u64> = BTreeMap::new();
    for mr in matched {
        for (&id, &n) in &mr.term_counts {
            let e = matcher.entry(id);
            if e.category == category {
                *counts.entry(e.clone()).or_default() += n as u64;
            }
        }
    }
    Ok(CorpusTermStats::from_counts(corpus_id, category, matcher.fingerprint(), counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increased,
    Decreased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCloudEntry {
    pub entry: LexiconEntry,
    pub weight: f64,
    pub direction: Direction,
    pub count_live: u64,
    pub count_base: u64,
}

/// Entries frequent enough in both corpora, heaviest first, ties by surface.
///
/// The probability ratio `(c_live / t_live) / (c_base / t_base)` is formed
/// as a reduced integer fraction before taking logs, so swapping corpora or
/// scaling one corpus by an integer gives bit-identical weights.
pub fn cloud_weights(
    live: &CorpusTermStats,
    base: &CorpusTermStats,
    min_count: u64,
) -> Result<Vec<WordCloudEntry>, CloudError> {
    if min_count == 0 {
        return Err(CloudError::ZeroMinCount);
    }
    if live.lexicon != base.lexicon {
        return Err(CloudError::LexiconMismatch {
            live: live.lexicon.clone(),
            base: base.lexicon.clone(),
        });
    }
    if live.category != base.category {
        return Err(CloudError::CategoryMismatch {
            live: live.category.clone(),
            base: base.category.clone(),
        });
    }
    if live.category_total == 0 || base.category_total == 0 {
        log::warn!(
            "{}: no matches in {}, cloud left empty",
            live.category,
            if live.category_total == 0 { &live.corpus_id } else { &base.corpus_id }
        );
        return Ok(Vec::new());
    }
    let mut out: Vec<WordCloudEntry> = live
        .counts
        .iter()
        .filter_map(|(entry, &count_live)| {
            let count_base = base.count(entry);
            if count_live < min_count || count_base < min_count {
                return None;
            }
            let num = count_live as u128 * base.category_total as u128;
            let den = count_base as u128 * live.category_total as u128;
            let g = num.gcd(&den);
            let (num, den) = (num / g, den / g);
            let weight = ((num as f64).ln() - (den as f64).ln()).abs();
            Some(WordCloudEntry {
                entry: entry.clone(),
                weight,
                direction: if num >= den { Direction::Increased } else { Direction::Decreased },
                count_live,
                count_base,
            })
        })
        .collect();
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.entry.surface.cmp(&b.entry.surface)));
    Ok(out)
}

/// Cloud document for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudExport {
    pub schema_version: u32,
    pub category: String,
    pub min_count: u64,
    pub entries: Vec<CloudExportEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudExportEntry {
    pub term: String,
    pub weight: f64,
    pub direction: Direction,
    pub count_live: u64,
    pub count_base: u64,
}

impl CloudExport {
    pub fn new(category: &str, min_count: u64, entries: &[WordCloudEntry]) -> Self {
        CloudExport {
            schema_version: crate::metrics::SCHEMA_VERSION,
            category: category.to_string(),
            min_count,
            entries: entries
                .iter()
                .map(|e| CloudExportEntry {
                    term: e.entry.surface.clone(),
                    weight: e.weight,
                    direction: e.direction,
                    count_live: e.count_live,
                    count_base: e.count_base,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cloud serialize") + "\n"
    }
}
