//! Test-only oracles and generators shared by the integration suites.
//!
//! Nothing here calls into the implementation paths it is used to check: the
//! match oracle re-tokenizes with a regex and scans every entry linearly, the
//! metric oracles group and average with plain loops.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::LazyLock;

use pulsemon_core::lexicon::{Lexicon, LexiconEntry};
use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OracleMatch {
    pub token_count: usize,
    pub categories: BTreeMap<String, u32>,
    pub terms: BTreeMap<(String, String), u32>,
}

static ALPHA_RUN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{Alphabetic}+").unwrap());

pub fn oracle_tokens(text: &str) -> Vec<String> {
    ALPHA_RUN
        .find_iter(text)
        .map(|m| m.as_str().to_uppercase().to_lowercase())
        .collect()
}

/// Per-entry linear scan.
pub fn oracle_match(lex: &Lexicon, text: &str) -> OracleMatch {
    let tokens = oracle_tokens(text);
    let mut out = OracleMatch {
        token_count: tokens.len(),
        ..Default::default()
    };
    let mut bump = |e: &LexiconEntry| {
        *out.categories.entry(e.category.clone()).or_default() += 1;
        *out.terms.entry((e.category.clone(), e.surface.clone())).or_default() += 1;
    };
    for cat in lex.categories() {
        let blocked: Vec<&str> = lex.blocked_words(cat).collect();
        let entries = lex.entries(cat);
        for tok in &tokens {
            let mut best: Option<(usize, &LexiconEntry)> = None;
            for e in entries.iter().filter(|e| e.tokens.len() == 1) {
                let score = if e.wildcard {
                    if tok.starts_with(&e.tokens[0]) && !blocked.contains(&tok.as_str()) {
                        e.tokens[0].chars().count()
                    } else {
                        continue;
                    }
                } else if *tok == e.tokens[0] {
                    usize::MAX
                } else {
                    continue;
                };
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, e));
                }
            }
            if let Some((_, e)) = best {
                bump(e);
            }
        }
        for e in entries.iter().filter(|e| e.tokens.len() > 1) {
            let n = e.tokens.len();
            let mut i = 0;
            while i + n <= tokens.len() {
                let head_ok = (0..n - 1).all(|k| tokens[i + k] == e.tokens[k]);
                let last = &tokens[i + n - 1];
                let tail_ok = if e.wildcard {
                    last.starts_with(&e.tokens[n - 1]) && !blocked.contains(&last.as_str())
                } else {
                    *last == e.tokens[n - 1]
                };
                if head_ok && tail_ok {
                    bump(e);
                    i += n;
                } else {
                    i += 1;
                }
            }
        }
    }
    out
}

pub fn to_oracle_form(m: &pulsemon_core::Matcher, r: &pulsemon_core::MatchResult) -> OracleMatch {
    OracleMatch {
        token_count: r.token_count,
        categories: r.category_counts.clone(),
        terms: r
            .term_counts
            .iter()
            .map(|(&id, &n)| {
                let e = m.entry(id);
                ((e.category.clone(), e.surface.clone()), n)
            })
            .collect(),
    }
}

const LETTERS: &[char] = &['a', 'b', 'e', 'n', 'r', 't', 'ä', 'ö', 'ü', 'ß'];
const SEPARATORS: &[&str] = &[" ", " ", " ", ", ", "!", "#", "@", "-", "1", "\n", ". "];

pub fn random_word<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| *LETTERS.choose(rng).unwrap()).collect()
}

/// Random category sources in lexicon file format; duplicates are dropped
/// by match key before rendering.
pub fn random_lexicon<R: Rng>(rng: &mut R, categories: usize, entries: usize) -> Lexicon {
    let mut by_cat: BTreeMap<String, BTreeMap<(Vec<String>, bool), String>> = BTreeMap::new();
    for _ in 0..entries {
        let cat = format!("c{}", rng.gen_range(0..categories));
        let words = if rng.gen_bool(0.2) { rng.gen_range(2..=3) } else { 1 };
        let parts: Vec<String> = (0..words).map(|_| random_word(rng, 4)).collect();
        let wildcard = rng.gen_bool(0.5);
        let key_tokens: Vec<String> = parts.iter().map(|p| p.to_uppercase().to_lowercase()).collect();
        let mut line = parts.join(" ");
        if rng.gen_bool(0.2) {
            line = line.to_uppercase();
        }
        if wildcard {
            line.push('*');
        }
        by_cat.entry(cat).or_default().entry((key_tokens, wildcard)).or_insert(line);
    }
    let rendered: Vec<(String, String)> = by_cat
        .into_iter()
        .map(|(c, m)| (c, m.into_values().collect::<Vec<_>>().join("\n")))
        .collect();
    Lexicon::from_sources(rendered.iter().map(|(c, t)| (c.as_str(), t.as_str()))).unwrap()
}

pub fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    let mut s = String::new();
    for _ in 0..n {
        let mut w = random_word(rng, 7);
        if rng.gen_bool(0.15) {
            w = w.to_uppercase();
        }
        s.push_str(&w);
        s.push_str(SEPARATORS.choose(rng).unwrap());
    }
    s
}

/// Relative closeness used by the numeric oracles.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub mod fixtures {
    use chrono::{DateTime, Duration, TimeZone, Utc};
    use pulsemon_core::ingest::{FixtureCorpus, NewsItem, Platform, Post};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 3, 16, 7, 0, 0).unwrap()
    }

    pub fn item(id: &str, ticker: &str, published_at: DateTime<Utc>) -> NewsItem {
        NewsItem {
            id: id.to_string(),
            ticker_id: ticker.to_string(),
            published_at,
            first_post_at: None,
        }
    }

    /// `n` posts under one item with increasing timestamps.
    pub fn item_posts(item_id: &str, n: usize, seed: u64) -> Vec<Post> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = t0() + Duration::seconds(rng.gen_range(5..60));
        (0..n)
            .map(|i| {
                t += Duration::seconds(rng.gen_range(0..90));
                Post::new(
                    Platform::Liveticker,
                    format!("{item_id}-{i:05}"),
                    t,
                    Some(format!("u{}", rng.gen_range(0..500))),
                    Some(item_id.to_string()),
                    format!("Beitrag {i} zu {item_id}: Angst\tund Hoffnung\nneue Zeile"),
                )
            })
            .collect()
    }

    pub fn ticker_url(id: &str, topic: &str) -> String {
        format!("https://news.example/jetzt/livebericht/{id}/{topic}")
    }

    /// One ticker, one item, `n` posts.
    pub fn single_item_corpus(item_id: &str, n: usize) -> FixtureCorpus {
        let mut c = FixtureCorpus::default();
        c.add_ticker(&ticker_url("1", "coronavirus"), "1", &[item(item_id, "1", t0())]);
        c.add_posts(item_id, &item_posts(item_id, n, n as u64));
        c
    }
}

pub mod metric_oracles {
    use std::collections::BTreeMap;

    use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc};
    use chrono_tz::Tz;
    use pulsemon_core::ingest::{Platform, Post};
    use pulsemon_core::metrics::{DailyIndicator, DateRange};
    use pulsemon_core::MatchResult;
    use rand::Rng;

    pub const CATS: [&str; 3] = ["anxiety", "anger", "posemo"];

    pub fn known() -> Vec<String> {
        CATS.iter().map(|c| c.to_string()).collect()
    }

    /// Posts spread over `days` days from 2020-03-01 with random counts that
    /// never exceed the token count.
    pub fn random_matched<R: Rng>(rng: &mut R, n: usize, days: i64) -> Vec<(Post, MatchResult)> {
        let start = Utc.with_ymd_and_hms(2020, 3, 1, 0, 0, 0).unwrap();
        (0..n)
            .map(|i| {
                let at = start + Duration::seconds(rng.gen_range(0..days * 86_400));
                let tokens = if rng.gen_bool(0.05) { 0 } else { rng.gen_range(1..40) };
                let mut counts = BTreeMap::new();
                for c in CATS {
                    if tokens > 0 && rng.gen_bool(0.4) {
                        counts.insert(c.to_string(), rng.gen_range(1..=tokens.min(5)) as u32);
                    }
                }
                let post = Post::new(Platform::Liveticker, format!("p{i:05}"), at, None, None, "");
                let mr = MatchResult {
                    token_count: tokens,
                    category_counts: counts,
                    term_counts: Default::default(),
                };
                (post, mr)
            })
            .collect()
    }

    /// Plain group-by-day average in input order.
    pub fn daily_mean(rows: &[(Post, MatchResult)], cat: &str, tz: Tz) -> BTreeMap<NaiveDate, (f64, u64)> {
        let mut acc: BTreeMap<NaiveDate, (f64, u64)> = BTreeMap::new();
        for (p, mr) in rows {
            if mr.token_count == 0 {
                continue;
            }
            let d = p.created_at.with_timezone(&tz).date_naive();
            let c = mr.category_counts.get(cat).copied().unwrap_or(0);
            let e = acc.entry(d).or_default();
            e.0 += c as f64 / mr.token_count as f64;
            e.1 += 1;
        }
        acc.into_iter().map(|(d, (s, n))| (d, (s / n as f64, n))).collect()
    }

    pub fn daily_proportion(rows: &[(Post, MatchResult)], cat: &str, tz: Tz) -> BTreeMap<NaiveDate, (f64, u64)> {
        let mut acc: BTreeMap<NaiveDate, (u64, u64)> = BTreeMap::new();
        for (p, mr) in rows {
            let d = p.created_at.with_timezone(&tz).date_naive();
            let e = acc.entry(d).or_default();
            if mr.category_counts.get(cat).copied().unwrap_or(0) >= 1 {
                e.0 += 1;
            }
            e.1 += 1;
        }
        acc.into_iter().map(|(d, (h, n))| (d, (h as f64 / n as f64, n))).collect()
    }

    /// Weekday means of values inside the period, Monday first.
    pub fn weekday_means(history: &[DailyIndicator], period: DateRange) -> [Option<f64>; 7] {
        let mut sums = [0.0; 7];
        let mut ns = [0usize; 7];
        for d in history {
            if d.date < period.start || d.date > period.end {
                continue;
            }
            let w = d.date.weekday().num_days_from_monday() as usize;
            sums[w] += d.value;
            ns[w] += 1;
        }
        std::array::from_fn(|w| if ns[w] == 0 { None } else { Some(sums[w] / ns[w] as f64) })
    }

    pub fn indicator_series(start: NaiveDate, values: &[f64]) -> Vec<DailyIndicator> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| DailyIndicator {
                date: start + Duration::days(i as i64),
                category: "anxiety".into(),
                metric: pulsemon_core::metrics::Metric::MeanPostFrequency,
                value: v,
                n_posts: 1,
            })
            .collect()
    }
}

/// The committed demo corpus wired to a temporary state tree.
pub mod demo {
    use std::collections::BTreeMap;
    use std::fs;
    use std::path::{Path, PathBuf};

    use chrono::{DateTime, TimeZone, Utc};
    use pulsemon_core::ingest::{ClientConfig, FixtureCorpus, FixtureServer};
    use pulsemon_core::pipeline::{PipelineConfig, RunOptions};
    use serde_json::Value;
    use tempfile::TempDir;

    pub fn repo_root() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
    }

    pub fn corpus() -> FixtureCorpus {
        FixtureCorpus::load(&repo_root().join("fixtures/liveticker")).unwrap()
    }

    /// A day after the demo window closes.
    pub fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 3, 24, 6, 0, 0).unwrap()
    }

    pub struct Demo {
        pub dir: TempDir,
        pub server: FixtureServer,
        pub cfg: PipelineConfig,
    }

    impl Demo {
        pub fn start() -> Self {
            Self::with_corpus(corpus())
        }

        pub fn with_corpus(corpus: FixtureCorpus) -> Self {
            let dir = tempfile::tempdir().unwrap();
            for f in ["microblog.tsv", "studentchat.tsv"] {
                fs::copy(repo_root().join("fixtures").join(f), dir.path().join(f)).unwrap();
            }
            let server = FixtureServer::start(corpus).unwrap();
            let text = config_text(server.base_url().as_ref(), "");
            let cfg = PipelineConfig::parse(&text, dir.path()).unwrap();
            Demo { dir, server, cfg }
        }

        /// Replaces the config, keeping paths relative to the demo dir.
        pub fn reconfigure(&mut self, extra: &str) {
            let text = config_text(self.server.base_url().as_ref(), extra);
            self.cfg = PipelineConfig::parse(&text, self.dir.path()).unwrap();
        }

        pub fn opts(&self, now: DateTime<Utc>) -> RunOptions {
            RunOptions {
                client: Some(ClientConfig::for_fixtures()),
                ..RunOptions::manual(now)
            }
        }

        pub fn path(&self, rel: &str) -> PathBuf {
            self.dir.path().join(rel)
        }

        pub fn append_microblog(&self, line: &str) {
            let p = self.path("microblog.tsv");
            let mut text = fs::read_to_string(&p).unwrap();
            text.push_str(line);
            text.push('\n');
            fs::write(p, text).unwrap();
        }
    }

    pub fn config_text(url: &str, extra: &str) -> String {
        let lex = repo_root().join("lexica");
        format!(
            r#"state_dir = "state"
out_dir = "out"
publish_dir = "public"
monitor_start = "2020-03-16"
monitor_end = "2020-03-22"
author_salt = "test"
workers = 3
{extra}

[lexicon]
paths = ["{lex}"]
exclusions = ["{lex}/exclusions.tsv"]

[[sources]]
name = "ticker"
platform = "liveticker"
kind = "http"
url = "{url}"
topic = "coronavirus|tagesgeschehen"
baseline_start = "2020-01-06"
baseline_end = "2020-01-19"

[[sources]]
name = "microblog"
platform = "microblog"
kind = "tsv"
path = "microblog.tsv"
baseline_start = "2020-01-06"
baseline_end = "2020-01-19"
exclusions = ["{lex}/exclusions-microblog.tsv"]

[[sources]]
name = "studentchat"
platform = "studentchat"
kind = "aggregates"
path = "studentchat.tsv"
baseline_start = "2020-01-06"
baseline_end = "2020-01-19"
"#,
            lex = lex.display()
        )
    }

    fn strip_generated_at(v: &mut Value) {
        if let Value::Object(m) = v {
            m.remove("generated_at");
        }
    }

    /// Every JSON file under `dir` except the run history, with
    /// `generated_at` removed.
    pub fn exports(dir: &Path) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                    continue;
                }
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                if rel == "runs.json" {
                    continue;
                }
                let mut v: Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
                strip_generated_at(&mut v);
                out.insert(rel, v);
            }
        }
        out
    }

    /// Raw bytes of every file except the run history, with the
    /// `generated_at` line blanked.
    pub fn export_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        exports(dir)
            .into_keys()
            .map(|rel| {
                let text = fs::read_to_string(dir.join(&rel)).unwrap();
                let kept: Vec<&str> = text.lines().filter(|l| !l.trim_start().starts_with("\"generated_at\"")).collect();
                (rel, kept.join("\n").into_bytes())
            })
            .collect()
    }
}
