use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use quick_xml::events::Event;
use regex::Regex;
use serde::Deserialize;
use url::Url;

use super::flatten::flatten_record;
use super::{IngestError, NewsItem, Platform, Post, TickerRef};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// Attempts per request for sitemap and item lists.
    pub attempts: u32,
    /// Resumptions allowed while paginating one item.
    pub max_resumes: u32,
    /// First backoff delay; doubles on every retry.
    pub backoff: Duration,
    /// Minimum spacing between requests to the host.
    pub min_interval: Duration,
    pub timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            attempts: 3,
            max_resumes: 3,
            backoff: Duration::from_millis(500),
            min_interval: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
        }
    }
}

impl ClientConfig {
    /// Settings for a local fixture server: no politeness delay, short backoff.
    pub fn for_fixtures() -> Self {
        ClientConfig {
            backoff: Duration::from_millis(5),
            min_interval: Duration::ZERO,
            timeout: Duration::from_secs(10),
            ..Default::default()
        }
    }
}

/// Which sitemap URLs count as relevant tickers.
#[derive(Debug, Clone, Default)]
pub struct TopicFilter(Option<Regex>);

impl TopicFilter {
    pub fn all() -> Self {
        TopicFilter(None)
    }

    pub fn pattern(re: &str) -> Result<Self, regex::Error> {
        Ok(TopicFilter(Some(Regex::new(re)?)))
    }

    pub fn accepts(&self, url: &Url) -> bool {
        self.0.as_ref().is_none_or(|re| re.is_match(url.as_str()))
    }
}

/// Client for the liveticker protocol:
///
/// - `GET /sitemap` lists ticker page URLs (sitemap XML or one URL per line)
/// - `GET /ticker/{id}/items` returns a nested document with the item array
/// - `GET /item/{id}/posts?limit=B&cursor=C` returns `{posts, next_cursor}`
pub struct LivetickerClient {
    base: Url,
    agent: ureq::Agent,
    cfg: ClientConfig,
    last_request: Mutex<Option<Instant>>,
    requests: AtomicU64,
}

#[derive(Debug, Deserialize)]
struct PostPage {
    posts: Vec<WirePost>,
    next_cursor: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WirePost {
    id: String,
    created_at: DateTime<Utc>,
    #[serde(default)]
    author: Option<String>,
    #[serde(default)]
    text: String,
}

impl LivetickerClient {
    pub fn new(base: Url, cfg: ClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        LivetickerClient {
            base,
            agent,
            cfg,
            last_request: Mutex::new(None),
            requests: AtomicU64::new(0),
        }
    }

    /// Requests sent so far, retries included.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn endpoint(&self, path: &str) -> Url {
        let mut url = self.base.clone();
        let joined = format!("{}/{}", url.path().trim_end_matches('/'), path.trim_start_matches('/'));
        url.set_path(&joined);
        url
    }

    fn pace(&self) {
        let mut last = self.last_request.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let since = prev.elapsed();
            if since < self.cfg.min_interval {
                thread::sleep(self.cfg.min_interval - since);
            }
        }
        *last = Some(Instant::now());
    }

    /// One GET; returns status and body for any HTTP answer.
    fn get_once(&self, url: &Url) -> Result<(u16, String), IngestError> {
        self.pace();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let net = |e: ureq::Error| IngestError::Network {
            url: url.to_string(),
            message: e.to_string(),
        };
        let mut resp = self.agent.get(url.as_str()).call().map_err(net)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(net)?;
        Ok((status, body))
    }

    /// GET with backoff; `Ok(None)` for 404.
    fn get_retrying(&self, url: &Url) -> Result<Option<String>, IngestError> {
        let mut delay = self.cfg.backoff;
        let mut attempt = 1;
        loop {
            let err = match self.get_once(url) {
                Ok((200..=299, body)) => return Ok(Some(body)),
                Ok((404, _)) => return Ok(None),
                Ok((status, _)) => IngestError::Status {
                    url: url.to_string(),
                    status,
                },
                Err(e) => e,
            };
            if !err.is_transient() || attempt >= self.cfg.attempts {
                return Err(err);
            }
            log::warn!("{err}; retrying in {delay:?}");
            thread::sleep(delay);
            delay *= 2;
            attempt += 1;
        }
    }

    /// Lists tickers from the sitemap, filtered and sorted by URL.
    pub fn discover_tickers(&self, filter: &TopicFilter, now: DateTime<Utc>) -> Result<Vec<TickerRef>, IngestError> {
        let url = self.endpoint("sitemap");
        let body = self.get_retrying(&url)?.ok_or(IngestError::Status {
            url: url.to_string(),
            status: 404,
        })?;
        let mut refs: BTreeMap<String, TickerRef> = BTreeMap::new();
        for (offset, loc) in parse_sitemap(&body)? {
            if !filter.accepts(&loc) {
                continue;
            }
            let ticker_id = ticker_id_from_url(&loc).ok_or_else(|| IngestError::MalformedSitemap {
                offset,
                message: format!("no ticker id in {loc}"),
            })?;
            refs.entry(loc.to_string()).or_insert(TickerRef {
                url: loc,
                ticker_id,
                discovered_at: now,
            });
        }
        Ok(refs.into_values().collect())
    }

    /// Lists the news items of one ticker. A missing ticker yields no items.
    pub fn fetch_news_items(&self, ticker: &TickerRef) -> Result<Vec<NewsItem>, IngestError> {
        let url = self.endpoint(&format!("ticker/{}/items", ticker.ticker_id));
        let Some(body) = self.get_retrying(&url)? else {
            log::warn!("ticker {} not found at {url}", ticker.ticker_id);
            return Ok(Vec::new());
        };
        items_from_document(&body, &ticker.ticker_id)
    }

    /// Pulls every post of one item, batch by batch.
    ///
    /// Stops at a short or empty batch or a null cursor. A failing page is
    /// retried from the same cursor up to `max_resumes` times in total;
    /// beyond that the whole item fails and nothing is returned.
    pub fn fetch_posts(&self, item_id: &str, batch_size: usize) -> Result<Vec<Post>, IngestError> {
        assert!(batch_size >= 1, "batch_size must be positive");
        let mut cursor: Option<String> = None;
        let mut seen_cursors: HashSet<String> = HashSet::new();
        let mut posts: BTreeMap<String, Post> = BTreeMap::new();
        let mut resumes = 0;
        let mut delay = self.cfg.backoff;

        loop {
            let mut url = self.endpoint(&format!("item/{item_id}/posts"));
            {
                let mut q = url.query_pairs_mut();
                if let Some(c) = &cursor {
                    q.append_pair("cursor", c);
                }
                q.append_pair("limit", &batch_size.to_string());
            }
            let page = match self.get_page(&url) {
                Ok(page) => page,
                Err(err) if err.is_transient() && resumes < self.cfg.max_resumes => {
                    resumes += 1;
                    log::warn!("item {item_id}: {err}; resuming ({resumes}/{})", self.cfg.max_resumes);
                    thread::sleep(delay);
                    delay *= 2;
                    continue;
                }
                Err(err) if err.is_transient() => {
                    return Err(IngestError::PaginationFailed {
                        item: item_id.to_string(),
                        resumes,
                        last: Box::new(err),
                    })
                }
                Err(err) => return Err(err),
            };

            let n = page.posts.len();
            for wp in page.posts {
                posts.entry(wp.id.clone()).or_insert_with(|| {
                    Post::new(
                        Platform::Liveticker,
                        wp.id,
                        wp.created_at,
                        wp.author,
                        Some(item_id.to_string()),
                        wp.text,
                    )
                });
            }
            match page.next_cursor {
                Some(next) if n >= batch_size => {
                    if !seen_cursors.insert(next.clone()) {
                        return Err(IngestError::ContinuationLoop {
                            item: item_id.to_string(),
                            cursor: next,
                        });
                    }
                    cursor = Some(next);
                }
                _ => break,
            }
        }

        let mut out: Vec<Post> = posts.into_values().collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    fn get_page(&self, url: &Url) -> Result<PostPage, IngestError> {
        let (status, body) = self.get_once(url)?;
        if !(200..=299).contains(&status) {
            return Err(IngestError::Status {
                url: url.to_string(),
                status,
            });
        }
        let mut de = serde_json::Deserializer::from_str(&body);
        serde_path_to_error::deserialize(&mut de).map_err(|e| IngestError::MalformedDocument {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

/// Extracts item ids and publication times from a flattened items document.
///
/// Any `…items.<n>.id` / `…items.<n>.published_at` path pair counts, so the
/// wrapper objects around the array do not matter.
fn items_from_document(body: &str, ticker_id: &str) -> Result<Vec<NewsItem>, IngestError> {
    let rows = flatten_record(body)?;
    let re = Regex::new(r"(^|\.)items\.(\d+)\.(id|published_at)$").expect("static regex");
    let mut slots: BTreeMap<usize, (Option<String>, Option<String>)> = BTreeMap::new();
    for (key, value) in rows {
        if let Some(c) = re.captures(&key) {
            let idx: usize = c[2].parse().expect("digits");
            let slot = slots.entry(idx).or_default();
            match &c[3] {
                "id" => slot.0 = Some(value),
                _ => slot.1 = Some(value),
            }
        }
    }
    slots
        .into_iter()
        .map(|(idx, slot)| {
            let missing = |field: &str| IngestError::MalformedDocument {
                path: format!("items.{idx}.{field}"),
                message: "missing field".into(),
            };
            let id = slot.0.ok_or_else(|| missing("id"))?;
            let published = slot.1.ok_or_else(|| missing("published_at"))?;
            let published_at = DateTime::parse_from_rfc3339(&published)
                .map_err(|e| IngestError::MalformedDocument {
                    path: format!("items.{idx}.published_at"),
                    message: e.to_string(),
                })?
                .with_timezone(&Utc);
            Ok(NewsItem {
                id,
                ticker_id: ticker_id.to_string(),
                published_at: chrono::SubsecRound::trunc_subsecs(published_at, 0),
                first_post_at: None,
            })
        })
        .collect()
}

/// The first all-digit path segment, else the last segment.
fn ticker_id_from_url(url: &Url) -> Option<String> {
    let segments: Vec<&str> = url.path_segments()?.filter(|s| !s.is_empty()).collect();
    segments
        .iter()
        .find(|s| s.bytes().all(|b| b.is_ascii_digit()))
        .or(segments.last())
        .map(|s| s.to_string())
}

/// Parses a sitemap body into `(byte offset, url)` pairs.
///
/// Bodies starting with `<` are read as sitemap XML (`<loc>` elements);
/// anything else as one URL per line with `#` comments.
pub fn parse_sitemap(body: &str) -> Result<Vec<(usize, Url)>, IngestError> {
    if body.trim_start().starts_with('<') {
        parse_sitemap_xml(body)
    } else {
        let mut out = Vec::new();
        let mut offset = 0;
        for line in body.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let lead = line.len() - line.trim_start().len();
                let url = Url::parse(trimmed).map_err(|e| IngestError::MalformedSitemap {
                    offset: offset + lead,
                    message: format!("{e}: {trimmed:?}"),
                })?;
                out.push((offset + lead, url));
            }
            offset += line.len();
        }
        Ok(out)
    }
}

fn parse_sitemap_xml(body: &str) -> Result<Vec<(usize, Url)>, IngestError> {
    let mut reader = quick_xml::Reader::from_str(body);
    reader.config_mut().trim_text(true);
    let mut out = Vec::new();
    let mut in_loc = false;
    loop {
        let pos = reader.buffer_position() as usize;
        let event = reader.read_event().map_err(|e| IngestError::MalformedSitemap {
            offset: reader.error_position() as usize,
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) if e.local_name().as_ref() == b"loc" => in_loc = true,
            Event::End(e) if e.local_name().as_ref() == b"loc" => in_loc = false,
            Event::Text(t) if in_loc => {
                let text = t.unescape().map_err(|e| IngestError::MalformedSitemap {
                    offset: pos,
                    message: e.to_string(),
                })?;
                let url = Url::parse(text.trim()).map_err(|e| IngestError::MalformedSitemap {
                    offset: pos,
                    message: format!("{e}: {:?}", text.trim()),
                })?;
                out.push((pos, url));
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}
