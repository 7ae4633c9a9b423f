use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ingest::{escape_field, read_posts_tsv, unescape_field, NewsItem, Platform, Post, POST_HEADER};
use crate::lexicon::MatchResult;

/// Append-only on-disk state: posts partitioned by platform and month, the
/// index of fetched news items and the per-platform match cache.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// One fetched news item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRecord {
    pub item: NewsItem,
    pub source: String,
    pub posts: u64,
    pub fetched_at: DateTime<Utc>,
}

const ITEMS_HEADER: &str = "item_id\tticker_id\tsource\tpublished_at\tfirst_post_at\tposts\tfetched_at";

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    id: String,
    result: MatchResult,
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        for sub in ["posts", "matches", "rejects"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| PipelineError::io(&p, e))?;
        }
        Ok(Store { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn platform_dir(&self, platform: Platform) -> PathBuf {
        self.root.join("posts").join(platform.as_str())
    }

    pub fn rejects_path(&self, source: &str) -> PathBuf {
        self.root.join("rejects").join(format!("{source}.tsv"))
    }

    /// All stored posts of a platform, ordered by time then id.
    pub fn posts(&self, platform: Platform) -> Result<Vec<Post>, PipelineError> {
        let dir = self.platform_dir(platform);
        let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "tsv"))
                .collect(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(PipelineError::io(&dir, e)),
        };
        files.sort();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for f in files {
            let text = read_complete_lines(&f)?;
            let parsed = read_posts_tsv(text.as_bytes(), &f.display().to_string())?;
            for r in &parsed.rejects {
                log::warn!("{}:{}: unreadable stored post: {}", f.display(), r.line, r.reason);
            }
            for p in parsed.posts {
                if seen.insert(p.id.clone()) {
                    out.push(p);
                }
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn post_ids(&self, platform: Platform) -> Result<HashSet<String>, PipelineError> {
        Ok(self.posts(platform)?.into_iter().map(|p| p.id).collect())
    }

    /// Appends posts whose id is not in `known`, and adds them to it.
    /// Returns how many were written.
    pub fn append_posts(
        &self,
        platform: Platform,
        posts: &[Post],
        known: &mut HashSet<String>,
    ) -> Result<usize, PipelineError> {
        let mut by_month: BTreeMap<String, Vec<&Post>> = BTreeMap::new();
        for p in posts {
            if p.platform != platform {
                log::warn!("post {} is {}, not {platform}; skipped", p.id, p.platform);
                continue;
            }
            if known.insert(p.id.clone()) {
                by_month.entry(p.created_at.format("%Y-%m").to_string()).or_default().push(p);
            }
        }
        let dir = self.platform_dir(platform);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        let mut written = 0;
        for (month, rows) in by_month {
            let path = dir.join(format!("{month}.tsv"));
            let file = open_for_append(&path, Some(POST_HEADER.join("\t").as_str()))?;
            let mut w = BufWriter::new(file);
            for p in rows {
                crate::ingest::write_post_row(&mut w, p).map_err(|e| PipelineError::io(&path, e))?;
                written += 1;
            }
            let file = w.into_inner().map_err(|e| PipelineError::io(&path, e.into_error()))?;
            file.sync_data().map_err(|e| PipelineError::io(&path, e))?;
        }
        Ok(written)
    }

    fn items_path(&self) -> PathBuf {
        self.root.join("fetched_items.tsv")
    }

    pub fn fetched_items(&self) -> Result<BTreeMap<String, ItemRecord>, PipelineError> {
        let path = self.items_path();
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let text = read_complete_lines(&path)?;
        let mut out = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            match parse_item_line(line) {
                Ok(rec) => {
                    out.insert(rec.item.id.clone(), rec);
                }
                Err(m) => log::warn!("{}:{}: {m}", path.display(), i + 1),
            }
        }
        Ok(out)
    }

    pub fn record_item(&self, rec: &ItemRecord) -> Result<(), PipelineError> {
        let path = self.items_path();
        let mut f = open_for_append(&path, Some(ITEMS_HEADER))?;
        let t = |d: &DateTime<Utc>| d.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            escape_field(&rec.item.id),
            escape_field(&rec.item.ticker_id),
            escape_field(&rec.source),
            t(&rec.item.published_at),
            rec.item.first_post_at.as_ref().map(t).unwrap_or_default(),
            rec.posts,
            t(&rec.fetched_at)
        )
        .and_then(|_| f.sync_data())
        .map_err(|e| PipelineError::io(&path, e))
    }

    fn cache_path(&self, platform: Platform) -> PathBuf {
        self.root.join("matches").join(format!("{platform}.jsonl"))
    }

    /// Cached match results for a platform; empty when the cache was built
    /// with a different lexicon.
    pub fn load_matches(&self, platform: Platform, fingerprint: &str) -> Result<HashMap<String, MatchResult>, PipelineError> {
        let path = self.cache_path(platform);
        if !path.exists() {
            return Ok(HashMap::new());
        }
        let text = read_complete_lines(&path)?;
        let mut lines = text.lines();
        match lines.next().map(serde_json::from_str::<CacheHeader>) {
            Some(Ok(h)) if h.fingerprint == fingerprint => {}
            _ => {
                log::info!("{}: lexicon changed, cache dropped", path.display());
                return Ok(HashMap::new());
            }
        }
        let mut out = HashMap::new();
        for line in lines {
            match serde_json::from_str::<CacheLine>(line) {
                Ok(c) => {
                    out.insert(c.id, c.result);
                }
                Err(e) => log::warn!("{}: bad cache line: {e}", path.display()),
            }
        }
        Ok(out)
    }

    /// Appends results; `fresh` starts a new cache file for `fingerprint`.
    pub fn append_matches(
        &self,
        platform: Platform,
        fingerprint: &str,
        fresh: bool,
        results: &[(&str, &MatchResult)],
    ) -> Result<(), PipelineError> {
        let path = self.cache_path(platform);
        let header = serde_json::to_string(&CacheHeader {
            fingerprint: fingerprint.to_string(),
        })
        .expect("header serialize");
        if fresh {
            fs::write(&path, format!("{header}\n")).map_err(|e| PipelineError::io(&path, e))?;
        }
        let file = open_for_append(&path, Some(&header))?;
        let mut w = BufWriter::new(file);
        for (id, r) in results {
            let line = serde_json::to_string(&CacheLine {
                id: id.to_string(),
                result: (*r).clone(),
            })
            .expect("cache serialize");
            writeln!(w, "{line}").map_err(|e| PipelineError::io(&path, e))?;
        }
        let file = w.into_inner().map_err(|e| PipelineError::io(&path, e.into_error()))?;
        file.sync_data().map_err(|e| PipelineError::io(&path, e))
    }
}

/// Opens a line file for appending. A missing or empty file gets `header`
/// if one is given;
/// a torn final line from an interrupted write is cut off first.
pub(crate) fn open_for_append(path: &Path, header: Option<&str>) -> Result<File, PipelineError> {
    let io_err = |e| PipelineError::io(path, e);
    let mut f = OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(path)
        .map_err(io_err)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(io_err)?;
    let keep = match buf.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if keep != buf.len() {
        log::warn!("{}: dropping {} bytes of an unfinished line", path.display(), buf.len() - keep);
        f.set_len(keep as u64).map_err(io_err)?;
    }
    f.seek(SeekFrom::Start(keep as u64)).map_err(io_err)?;
    if let (0, Some(header)) = (keep, header) {
        writeln!(f, "{header}").map_err(io_err)?;
    }
    Ok(f)
}

/// File contents up to and including the last newline.
pub(crate) fn read_complete_lines(path: &Path) -> Result<String, PipelineError> {
    let mut text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    if !text.ends_with('\n') && !text.is_empty() {
        let keep = text.rfind('\n').map(|i| i + 1).unwrap_or(0);
        log::warn!("{}: ignoring unfinished last line", path.display());
        text.truncate(keep);
    }
    Ok(text)
}

fn parse_item_line(line: &str) -> Result<ItemRecord, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 7 {
        return Err(format!("expected 7 fields, found {}", f.len()));
    }
    let time = |s: &str| {
        DateTime::parse_from_rfc3339(s)
            .map(|d| d.with_timezone(&Utc))
            .map_err(|e| format!("bad timestamp {s:?}: {e}"))
    };
    Ok(ItemRecord {
        item: NewsItem {
            id: unescape_field(f[0])?,
            ticker_id: unescape_field(f[1])?,
            published_at: time(f[3])?,
            first_post_at: if f[4].is_empty() { None } else { Some(time(f[4])?) },
        },
        source: unescape_field(f[2])?,
        posts: f[5].parse().map_err(|e| format!("bad post count: {e}"))?,
        fetched_at: time(f[6])?,
    })
}
