use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use chrono::SecondsFormat;
use serde_json::{json, Value};
use url::Url;

use super::{NewsItem, Post};

/// Recorded liveticker data the fixture server answers from.
///
/// On disk a corpus is a directory with `sitemap.xml` (or `sitemap.txt`),
/// `tickers/<ticker id>.json` holding the items documents and
/// `posts/<item id>.json` holding `{"posts": [...]}` in feed order. Sitemap
/// and items documents are served byte for byte; post lists are paginated on
/// request so any batch size works.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureCorpus {
    pub sitemap: String,
    pub tickers: BTreeMap<String, String>,
    pub posts: BTreeMap<String, Vec<Value>>,
}

impl FixtureCorpus {
    pub fn load(dir: &Path) -> io::Result<Self> {
        let sitemap = match fs::read_to_string(dir.join("sitemap.xml")) {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::NotFound => fs::read_to_string(dir.join("sitemap.txt"))?,
            Err(e) => return Err(e),
        };
        let mut corpus = FixtureCorpus {
            sitemap,
            ..Default::default()
        };
        for (sub, is_posts) in [("tickers", false), ("posts", true)] {
            let sub_dir = dir.join(sub);
            if !sub_dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&sub_dir)? {
                let path = entry?.path();
                if path.extension().is_none_or(|e| e != "json") {
                    continue;
                }
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let body = fs::read_to_string(&path)?;
                if is_posts {
                    let doc: Value = serde_json::from_str(&body)
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                    let posts = doc.get("posts").and_then(Value::as_array).cloned().ok_or_else(|| {
                        io::Error::new(io::ErrorKind::InvalidData, format!("{}: no posts array", path.display()))
                    })?;
                    corpus.posts.insert(id, posts);
                } else {
                    corpus.tickers.insert(id, body);
                }
            }
        }
        Ok(corpus)
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("tickers"))?;
        fs::create_dir_all(dir.join("posts"))?;
        let name = if self.sitemap.trim_start().starts_with('<') {
            "sitemap.xml"
        } else {
            "sitemap.txt"
        };
        fs::write(dir.join(name), &self.sitemap)?;
        for (id, body) in &self.tickers {
            fs::write(dir.join("tickers").join(format!("{id}.json")), body)?;
        }
        for (id, posts) in &self.posts {
            let body = serde_json::to_string_pretty(&json!({ "posts": posts }))?;
            fs::write(dir.join("posts").join(format!("{id}.json")), body + "\n")?;
        }
        Ok(())
    }

    /// Adds a ticker page URL to a plain-text sitemap and records its items.
    pub fn add_ticker(&mut self, url: &str, ticker_id: &str, items: &[NewsItem]) {
        self.sitemap.push_str(url);
        self.sitemap.push('\n');
        let items: Vec<Value> = items
            .iter()
            .map(|i| {
                json!({
                    "id": i.id,
                    "published_at": i.published_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                })
            })
            .collect();
        let doc = json!({ "ticker": { "id": ticker_id, "items": items } });
        self.tickers.insert(ticker_id.to_string(), doc.to_string());
    }

    /// Appends posts to an item's feed, in order.
    pub fn add_posts<'a>(&mut self, item_id: &str, posts: impl IntoIterator<Item = &'a Post>) {
        let feed = self.posts.entry(item_id.to_string()).or_default();
        for p in posts {
            feed.push(json!({
                "id": p.id,
                "created_at": p.created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                "author": p.author,
                "text": p.text,
            }));
        }
    }
}

/// Failure modes the fixture server can be told to produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// Answer the next `times` requests whose path contains `path_contains`
    /// with `status`.
    Status {
        path_contains: String,
        times: u32,
        status: u16,
    },
    /// Always hand out the same continuation cursor for this item.
    StuckCursor { item: String },
}

struct State {
    corpus: RwLock<FixtureCorpus>,
    faults: Mutex<Vec<Fault>>,
    log: Mutex<Vec<String>>,
}

/// Local HTTP server speaking the liveticker protocol from a [`FixtureCorpus`].
pub struct FixtureServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    state: Arc<State>,
    workers: Vec<JoinHandle<()>>,
}

const WORKERS: usize = 4;
const STUCK_CURSOR: &str = "stuck";

impl FixtureServer {
    /// Binds an ephemeral local port.
    pub fn start(corpus: FixtureCorpus) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", corpus)
    }

    pub fn bind(addr: &str, corpus: FixtureCorpus) -> io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("fixture server is not on an IP socket"))?;
        let server = Arc::new(server);
        let state = Arc::new(State {
            corpus: RwLock::new(corpus),
            faults: Mutex::new(Vec::new()),
            log: Mutex::new(Vec::new()),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let state = Arc::clone(&state);
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        let (status, content_type, body) = state.respond(req.method(), req.url());
                        let header = tiny_http::Header::from_bytes("Content-Type", content_type).expect("static header");
                        let resp = tiny_http::Response::from_string(body)
                            .with_status_code(status)
                            .with_header(header);
                        if let Err(e) = req.respond(resp) {
                            log::debug!("fixture server: {e}");
                        }
                    }
                })
            })
            .collect();
        Ok(FixtureServer {
            server,
            addr,
            state,
            workers,
        })
    }

    pub fn base_url(&self) -> Url {
        Url::parse(&format!("http://{}/", self.addr)).expect("valid address")
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn inject(&self, fault: Fault) {
        self.state.faults.lock().unwrap().push(fault);
    }

    pub fn clear_faults(&self) {
        self.state.faults.lock().unwrap().clear();
    }

    /// Request targets served so far, in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn reset_log(&self) {
        self.state.log.lock().unwrap().clear();
    }

    pub fn update<F: FnOnce(&mut FixtureCorpus)>(&self, f: F) {
        f(&mut self.state.corpus.write().unwrap());
    }

    /// Serves until the process ends; for command-line use.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl State {
    fn respond(&self, method: &tiny_http::Method, target: &str) -> (u16, &'static str, String) {
        self.log.lock().unwrap().push(target.to_string());
        if *method != tiny_http::Method::Get {
            return (405, "text/plain", "method not allowed".into());
        }
        let Ok(url) = Url::parse("http://fixture").and_then(|b| b.join(target)) else {
            return (400, "text/plain", "bad request target".into());
        };
        if let Some(status) = self.take_status_fault(url.path()) {
            return (status, "text/plain", format!("injected {status}"));
        }
        let segments: Vec<&str> = url.path_segments().map(|s| s.collect()).unwrap_or_default();
        let corpus = self.corpus.read().unwrap();
        match segments.as_slice() {
            ["sitemap"] => {
                let ct = if corpus.sitemap.trim_start().starts_with('<') {
                    "application/xml"
                } else {
                    "text/plain; charset=utf-8"
                };
                (200, ct, corpus.sitemap.clone())
            }
            ["ticker", id, "items"] => match corpus.tickers.get(*id) {
                Some(body) => (200, "application/json", body.clone()),
                None => (404, "text/plain", "no such ticker".into()),
            },
            ["item", id, "posts"] => match corpus.posts.get(*id) {
                Some(feed) => self.page(id, feed, &url),
                None => (404, "text/plain", "no such item".into()),
            },
            _ => (404, "text/plain", "not found".into()),
        }
    }

    fn take_status_fault(&self, path: &str) -> Option<u16> {
        let mut faults = self.faults.lock().unwrap();
        for f in faults.iter_mut() {
            if let Fault::Status {
                path_contains,
                times,
                status,
            } = f
            {
                if *times > 0 && path.contains(path_contains.as_str()) {
                    *times -= 1;
                    return Some(*status);
                }
            }
        }
        None
    }

    fn page(&self, item: &str, feed: &[Value], url: &Url) -> (u16, &'static str, String) {
        let mut limit = 25usize;
        let mut offset = 0usize;
        for (k, v) in url.query_pairs() {
            match k.as_ref() {
                "limit" => match v.parse::<usize>() {
                    Ok(n) if n >= 1 => limit = n,
                    _ => return (400, "text/plain", format!("bad limit {v:?}")),
                },
                "cursor" if v == STUCK_CURSOR => offset = 0,
                "cursor" => match v.strip_prefix('c').and_then(|h| usize::from_str_radix(h, 16).ok()) {
                    Some(o) => offset = o,
                    None => return (400, "text/plain", format!("bad cursor {v:?}")),
                },
                _ => {}
            }
        }
        let stuck = self
            .faults
            .lock()
            .unwrap()
            .iter()
            .any(|f| matches!(f, Fault::StuckCursor { item: i } if i == item));
        let start = offset.min(feed.len());
        let end = (offset + limit).min(feed.len());
        let next = if stuck {
            Some(STUCK_CURSOR.to_string())
        } else if end < feed.len() {
            Some(format!("c{end:x}"))
        } else {
            None
        };
        let body = json!({ "posts": &feed[start..end], "next_cursor": next });
        (200, "application/json", body.to_string())
    }
}
