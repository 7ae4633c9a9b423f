use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime};
use chrono_tz::Tz;
use serde::Deserialize;
use url::Url;

use super::PipelineError;
use crate::ingest::Platform;
use crate::metrics::{BaselineMode, DateRange};
use crate::wordcloud::DEFAULT_MIN_COUNT;

/// How a source delivers data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceKind {
    /// Liveticker protocol at a base URL.
    Http { url: Url, topic: Option<String> },
    /// Post TSV file, re-read every run.
    Tsv { path: PathBuf },
    /// Daily aggregate TSV file.
    Aggregates { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceConfig {
    pub name: String,
    pub platform: Platform,
    pub kind: SourceKind,
    pub baseline: DateRange,
    /// Exclusion files applied to this source only.
    pub exclusions: Vec<PathBuf>,
}

impl SourceConfig {
    pub fn is_aggregate(&self) -> bool {
        matches!(self.kind, SourceKind::Aggregates { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconConfig {
    /// Category files; a directory stands for all its `*.txt` files.
    pub paths: Vec<PathBuf>,
    /// Exclusion files applied to every source.
    pub exclusions: Vec<PathBuf>,
    /// Require the six core categories.
    pub require_core: bool,
}

/// Validated configuration. Paths are absolute, resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub state_dir: PathBuf,
    pub out_dir: PathBuf,
    pub publish_dir: PathBuf,
    pub publish_hook: Option<String>,
    pub tz: Tz,
    pub schedule: NaiveTime,
    /// Whole days between the last processed day and today.
    pub lag_days: u32,
    pub batch_size: usize,
    pub workers: usize,
    pub min_count: u64,
    pub baseline_mode: BaselineMode,
    pub author_salt: String,
    pub retain_runs: usize,
    pub monitor_start: NaiveDate,
    pub monitor_end: Option<NaiveDate>,
    /// Delay between requests to a live host, in milliseconds.
    pub request_interval_ms: u64,
    pub lexicon: LexiconConfig,
    pub sources: Vec<SourceConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "d_state")]
    state_dir: PathBuf,
    #[serde(default = "d_out")]
    out_dir: PathBuf,
    #[serde(default = "d_publish")]
    publish_dir: PathBuf,
    publish_hook: Option<String>,
    #[serde(default = "d_tz")]
    tz: String,
    #[serde(default = "d_schedule")]
    schedule: String,
    #[serde(default = "d_lag")]
    lag_days: u32,
    #[serde(default = "d_batch")]
    batch_size: usize,
    #[serde(default = "d_workers")]
    workers: usize,
    #[serde(default = "d_min_count")]
    min_count: u64,
    #[serde(default)]
    baseline_mode: BaselineMode,
    #[serde(default)]
    author_salt: String,
    #[serde(default = "d_retain")]
    retain_runs: usize,
    monitor_start: NaiveDate,
    monitor_end: Option<NaiveDate>,
    #[serde(default = "d_interval")]
    request_interval_ms: u64,
    lexicon: RawLexicon,
    #[serde(default)]
    sources: Vec<RawSource>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLexicon {
    paths: Vec<PathBuf>,
    #[serde(default)]
    exclusions: Vec<PathBuf>,
    #[serde(default = "d_true")]
    require_core: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    name: String,
    platform: Platform,
    kind: String,
    url: Option<String>,
    path: Option<PathBuf>,
    topic: Option<String>,
    baseline_start: NaiveDate,
    baseline_end: NaiveDate,
    #[serde(default)]
    exclusions: Vec<PathBuf>,
}

fn d_state() -> PathBuf {
    "state".into()
}
fn d_out() -> PathBuf {
    "out".into()
}
fn d_publish() -> PathBuf {
    "public".into()
}
fn d_tz() -> String {
    "Europe/Vienna".into()
}
fn d_schedule() -> String {
    "07:00".into()
}
fn d_lag() -> u32 {
    1
}
fn d_batch() -> usize {
    25
}
fn d_workers() -> usize {
    4
}
fn d_min_count() -> u64 {
    DEFAULT_MIN_COUNT
}
fn d_retain() -> usize {
    30
}
fn d_interval() -> u64 {
    200
}
fn d_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let base = std::path::absolute(base).map_err(|e| PipelineError::io(base, e))?;
        Self::parse(&text, &base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses TOML text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let bad = |m: String| PipelineError::Config(m);
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let tz = Tz::from_str(&raw.tz).map_err(|_| bad(format!("unknown timezone {:?}", raw.tz)))?;
        let schedule = NaiveTime::parse_from_str(&raw.schedule, "%H:%M")
            .map_err(|_| bad(format!("schedule {:?} is not HH:MM", raw.schedule)))?;
        if raw.batch_size == 0 {
            return Err(bad("batch_size must be at least 1".into()));
        }
        if raw.workers == 0 {
            return Err(bad("workers must be at least 1".into()));
        }
        if raw.min_count == 0 {
            return Err(bad("min_count must be at least 1".into()));
        }
        if raw.retain_runs == 0 {
            return Err(bad("retain_runs must be at least 1".into()));
        }
        if let Some(end) = raw.monitor_end {
            if end < raw.monitor_start {
                return Err(bad(format!("monitor_end {end} precedes monitor_start {}", raw.monitor_start)));
            }
        }
        if raw.lexicon.paths.is_empty() {
            return Err(bad("lexicon.paths is empty".into()));
        }

        let mut sources = Vec::with_capacity(raw.sources.len());
        for s in raw.sources {
            let ctx = |m: &str| bad(format!("source {:?}: {m}", s.name));
            if sources.iter().any(|o: &SourceConfig| o.name == s.name) {
                return Err(ctx("duplicate name"));
            }
            if sources.iter().any(|o: &SourceConfig| o.platform == s.platform) {
                return Err(ctx(&format!("platform {} already has a source", s.platform)));
            }
            let baseline = DateRange::new(s.baseline_start, s.baseline_end)
                .ok_or_else(|| ctx("baseline_end precedes baseline_start"))?;
            if baseline.end >= raw.monitor_start {
                return Err(ctx(&format!(
                    "baseline {baseline} must end before the monitoring window starts on {}",
                    raw.monitor_start
                )));
            }
            let kind = match s.kind.as_str() {
                "http" => {
                    let url = s.url.as_deref().ok_or_else(|| ctx("kind http needs url"))?;
                    let mut url = Url::parse(url).map_err(|e| ctx(&format!("url: {e}")))?;
                    if !url.path().ends_with('/') {
                        url.set_path(&format!("{}/", url.path()));
                    }
                    if let Some(t) = &s.topic {
                        regex::Regex::new(t).map_err(|e| ctx(&format!("topic: {e}")))?;
                    }
                    SourceKind::Http { url, topic: s.topic.clone() }
                }
                "tsv" => SourceKind::Tsv {
                    path: abs(s.path.as_deref().ok_or_else(|| ctx("kind tsv needs path"))?),
                },
                "aggregates" => SourceKind::Aggregates {
                    path: abs(s.path.as_deref().ok_or_else(|| ctx("kind aggregates needs path"))?),
                },
                other => return Err(ctx(&format!("unknown kind {other:?} (http, tsv, aggregates)"))),
            };
            sources.push(SourceConfig {
                name: s.name,
                platform: s.platform,
                kind,
                baseline,
                exclusions: s.exclusions.iter().map(|p| abs(p)).collect(),
            });
        }

        Ok(PipelineConfig {
            state_dir: abs(&raw.state_dir),
            out_dir: abs(&raw.out_dir),
            publish_dir: abs(&raw.publish_dir),
            publish_hook: raw.publish_hook,
            tz,
            schedule,
            lag_days: raw.lag_days,
            batch_size: raw.batch_size,
            workers: raw.workers,
            min_count: raw.min_count,
            baseline_mode: raw.baseline_mode,
            author_salt: raw.author_salt,
            retain_runs: raw.retain_runs,
            monitor_start: raw.monitor_start,
            monitor_end: raw.monitor_end,
            request_interval_ms: raw.request_interval_ms,
            lexicon: LexiconConfig {
                paths: raw.lexicon.paths.iter().map(|p| abs(p)).collect(),
                exclusions: raw.lexicon.exclusions.iter().map(|p| abs(p)).collect(),
                require_core: raw.lexicon.require_core,
            },
            sources,
        })
    }

    pub fn source(&self, name: &str) -> Option<&SourceConfig> {
        self.sources.iter().find(|s| s.name == name)
    }
}
