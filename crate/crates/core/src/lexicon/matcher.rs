use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::entry::tokenize;
use super::{Lexicon, LexiconEntry, LexiconError};

/// Index of an entry in a [`Matcher`]'s entry table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u32);

/// Match statistics for one post.
///
/// Only non-zero counts are stored. `category_counts[c]` is always the sum of
/// `term_counts` over the entries of `c`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub token_count: usize,
    pub category_counts: BTreeMap<String, u32>,
    pub term_counts: BTreeMap<EntryId, u32>,
}

impl MatchResult {
    pub fn category_count(&self, category: &str) -> u32 {
        self.category_counts.get(category).copied().unwrap_or(0)
    }

    pub fn term_count(&self, id: EntryId) -> u32 {
        self.term_counts.get(&id).copied().unwrap_or(0)
    }
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: Vec<(char, u32)>,
    terminals: Vec<EntryId>,
}

/// Compiled, immutable form of a [`Lexicon`].
///
/// Single-word exact entries sit in a hash map, single-word wildcard stems in
/// a character trie, and phrases are indexed by their (always exact) first
/// word. A token counts at most once per category: exact entries win over
/// wildcards, longer stems over shorter ones. Phrase matches are counted on
/// top of that and never overlap themselves.
#[derive(Debug, Clone)]
pub struct Matcher {
    lexicon: Lexicon,
    fingerprint: String,
    entries: Vec<LexiconEntry>,
    entry_category: Vec<u16>,
    categories: Vec<String>,
    blocked: Vec<HashSet<String>>,
    exact: HashMap<String, Vec<EntryId>>,
    trie: Vec<TrieNode>,
    phrases: HashMap<String, Vec<EntryId>>,
}

pub fn compile_matcher(lex: &Lexicon) -> Result<Matcher, LexiconError> {
    Matcher::new(lex)
}

pub fn match_post(m: &Matcher, text: &str) -> MatchResult {
    m.match_text(text)
}

impl Matcher {
    pub fn new(lex: &Lexicon) -> Result<Self, LexiconError> {
        if lex.is_empty() {
            return Err(LexiconError::Empty);
        }
        let categories: Vec<String> = lex.categories().map(str::to_string).collect();
        assert!(categories.len() <= u16::MAX as usize, "too many categories");
        let blocked = categories
            .iter()
            .map(|c| lex.blocked_words(c).map(str::to_string).collect())
            .collect();

        let mut m = Matcher {
            lexicon: lex.clone(),
            fingerprint: lex.fingerprint(),
            entries: Vec::with_capacity(lex.len()),
            entry_category: Vec::with_capacity(lex.len()),
            categories,
            blocked,
            exact: HashMap::new(),
            trie: vec![TrieNode::default()],
            phrases: HashMap::new(),
        };
        for (cat_idx, cat) in lex.categories().enumerate() {
            for entry in lex.entries(cat) {
                let id = EntryId(m.entries.len() as u32);
                m.entries.push(entry.clone());
                m.entry_category.push(cat_idx as u16);
                if entry.is_phrase() {
                    m.phrases.entry(entry.tokens[0].clone()).or_default().push(id);
                } else if entry.wildcard {
                    m.insert_stem(&entry.tokens[0], id);
                } else {
                    m.exact.entry(entry.tokens[0].clone()).or_default().push(id);
                }
            }
        }
        Ok(m)
    }

    fn insert_stem(&mut self, stem: &str, id: EntryId) {
        let mut node = 0usize;
        for ch in stem.chars() {
            let next = match self.trie[node].children.binary_search_by_key(&ch, |&(c, _)| c) {
                Ok(pos) => self.trie[node].children[pos].1 as usize,
                Err(pos) => {
                    let idx = self.trie.len();
                    self.trie.push(TrieNode::default());
                    self.trie[node].children.insert(pos, (ch, idx as u32));
                    idx
                }
            };
            node = next;
        }
        self.trie[node].terminals.push(id);
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Fingerprint of the lexicon this matcher was compiled from.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.iter().any(|c| c == category)
    }

    pub fn entry(&self, id: EntryId) -> &LexiconEntry {
        &self.entries[id.0 as usize]
    }

    pub fn entry_ids(&self) -> impl Iterator<Item = EntryId> {
        (0..self.entries.len() as u32).map(EntryId)
    }

    pub fn match_text(&self, text: &str) -> MatchResult {
        let tokens = tokenize(text);
        self.match_tokens(&tokens)
    }

    pub fn match_tokens(&self, tokens: &[String]) -> MatchResult {
        let mut per_category = vec![0u32; self.categories.len()];
        let mut terms: BTreeMap<EntryId, u32> = BTreeMap::new();
        // (category, specificity, entry)
        let mut hits: Vec<(u16, usize, EntryId)> = Vec::new();
        let mut phrase_free: HashMap<EntryId, usize> = HashMap::new();

        for (pos, token) in tokens.iter().enumerate() {
            hits.clear();
            if let Some(ids) = self.exact.get(token) {
                hits.extend(ids.iter().map(|&id| (self.entry_category[id.0 as usize], usize::MAX, id)));
            }
            let mut node = 0usize;
            for (depth, ch) in token.chars().enumerate() {
                let children = &self.trie[node].children;
                match children.binary_search_by_key(&ch, |&(c, _)| c) {
                    Ok(i) => node = children[i].1 as usize,
                    Err(_) => break,
                }
                for &id in &self.trie[node].terminals {
                    let cat = self.entry_category[id.0 as usize];
                    if !self.blocked[cat as usize].contains(token) {
                        hits.push((cat, depth + 1, id));
                    }
                }
            }
            // keep the most specific hit per category
            hits.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            let mut last_cat = None;
            for &(cat, _, id) in &hits {
                if last_cat == Some(cat) {
                    continue;
                }
                last_cat = Some(cat);
                per_category[cat as usize] += 1;
                *terms.entry(id).or_default() += 1;
            }

            if let Some(ids) = self.phrases.get(token) {
                for &id in ids {
                    if phrase_free.get(&id).is_some_and(|&free| pos < free) {
                        continue;
                    }
                    if self.phrase_matches_at(id, tokens, pos) {
                        let len = self.entries[id.0 as usize].tokens.len();
                        phrase_free.insert(id, pos + len);
                        per_category[self.entry_category[id.0 as usize] as usize] += 1;
                        *terms.entry(id).or_default() += 1;
                    }
                }
            }
        }

        MatchResult {
            token_count: tokens.len(),
            category_counts: per_category
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(i, &n)| (self.categories[i].clone(), n))
                .collect(),
            term_counts: terms,
        }
    }

    fn phrase_matches_at(&self, id: EntryId, tokens: &[String], pos: usize) -> bool {
        let entry = &self.entries[id.0 as usize];
        let n = entry.tokens.len();
        if pos + n > tokens.len() {
            return false;
        }
        let window = &tokens[pos..pos + n];
        if window[..n - 1] != entry.tokens[..n - 1] {
            return false;
        }
        let last = &window[n - 1];
        if entry.wildcard && self.blocked[self.entry_category[id.0 as usize] as usize].contains(last) {
            return false;
        }
        entry.last_accepts(last)
    }
}
