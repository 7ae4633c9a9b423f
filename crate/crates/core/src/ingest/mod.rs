//! Getting posts into the monitor.
//!
//! Three routes: the paginated liveticker HTTP protocol ([`LivetickerClient`],
//! served locally by [`FixtureServer`]), post TSV files ([`ingest_tsv`]) and
//! pre-aggregated daily counts ([`ingest_aggregates`]).

mod client;
mod fixture;
mod flatten;
mod tsv;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

pub use client::{parse_sitemap, ClientConfig, LivetickerClient, TopicFilter};
pub use fixture::{Fault, FixtureCorpus, FixtureServer};
pub use flatten::{flatten_record, flatten_value};
pub(crate) use tsv::write_post_row;
pub use tsv::{
    escape_field, ingest_aggregates, ingest_tsv, read_posts_tsv, unescape_field, write_aggregates_tsv,
    write_posts_tsv, AggregateIngest, Reject, TsvIngest, AGGREGATE_HEADER, POST_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Liveticker,
    Microblog,
    Studentchat,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Liveticker, Platform::Microblog, Platform::Studentchat];

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Liveticker => "liveticker",
            Platform::Microblog => "microblog",
            Platform::Studentchat => "studentchat",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Platform::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown platform {s:?}"))
    }
}

/// One user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub platform: Platform,
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub author: Option<String>,
    pub parent_item: Option<String>,
    pub text: String,
}

impl Post {
    /// Builds a post, truncating the timestamp to whole seconds.
    pub fn new(
        platform: Platform,
        id: impl Into<String>,
        created_at: DateTime<Utc>,
        author: Option<String>,
        parent_item: Option<String>,
        text: impl Into<String>,
    ) -> Self {
        Post {
            platform,
            id: id.into(),
            created_at: created_at.trunc_subsecs(0),
            author,
            parent_item,
            text: text.into(),
        }
    }

    /// Unicode scalar count of the body.
    pub fn char_length(&self) -> usize {
        self.text.chars().count()
    }
}

/// A small news item inside a liveticker; posts hang off it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub ticker_id: String,
    pub published_at: DateTime<Utc>,
    pub first_post_at: Option<DateTime<Utc>>,
}

impl NewsItem {
    /// Records the earliest post time, unless it predates publication.
    pub fn observe_first_post(&mut self, posts: &[Post]) {
        let Some(first) = posts.iter().map(|p| p.created_at).min() else {
            return;
        };
        if first >= self.published_at {
            self.first_post_at = Some(first);
        } else {
            log::warn!(
                "item {}: first post at {first} precedes publication at {}; latency left unset",
                self.id,
                self.published_at
            );
        }
    }

    /// Seconds between publication and the first post.
    pub fn first_post_latency(&self) -> Option<f64> {
        self.first_post_at
            .map(|t| (t - self.published_at).num_milliseconds() as f64 / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickerRef {
    pub url: Url,
    pub ticker_id: String,
    pub discovered_at: DateTime<Utc>,
}

/// Daily counts delivered by an aggregating provider instead of raw posts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateDaily {
    pub date: NaiveDate,
    pub category: String,
    pub posts_total: u64,
    pub posts_matching: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("request to {url} failed: {message}")]
    Network { url: String, message: String },
    #[error("{url} answered HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("malformed sitemap at byte {offset}: {message}")]
    MalformedSitemap { offset: usize, message: String },
    #[error("malformed document at `{path}`: {message}")]
    MalformedDocument { path: String, message: String },
    #[error("item {item}: continuation cursor {cursor:?} returned twice")]
    ContinuationLoop { item: String, cursor: String },
    #[error("item {item}: pagination failed after {resumes} resumes: {last}")]
    PaginationFailed { item: String, resumes: u32, last: Box<IngestError> },
    #[error("{path}: {message}")]
    BadHeader { path: String, message: String },
    #[error("{path}: duplicate aggregate rows for {date} {category} (lines {first_line} and {line})")]
    DuplicateAggregate {
        path: String,
        date: NaiveDate,
        category: String,
        first_line: usize,
        line: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

impl IngestError {
    pub(crate) fn io(path: impl fmt::Display, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_string(),
            source,
        }
    }

    /// Worth another attempt: transport failures and server-side errors.
    pub fn is_transient(&self) -> bool {
        match self {
            IngestError::Network { .. } => true,
            IngestError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Replaces an author id with a salted hash before it is stored.
pub fn anonymize_author(salt: &str, author: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0]);
    h.update(author.as_bytes());
    hex::encode(&h.finalize()[..8])
}
