use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use chrono::{DateTime, Days, NaiveDate, TimeZone, Utc};
use rayon::prelude::*;

use super::artifacts::{build_artifacts, Artifacts, SourceData};
use super::config::{PipelineConfig, SourceConfig, SourceKind};
use super::ledger::{Ledger, RecordKind, RunRecord, RunStatus, SourceReport, Trigger};
use super::lock::FileLock;
use super::publish::{artifacts_root, clean_staging, commit, new_staging, numeric_dirs, prune, publish};
use super::store::{ItemRecord, Store};
use super::{FaultPlan, PipelineError};
use crate::ingest::{
    anonymize_author, ingest_aggregates, ingest_tsv, ClientConfig, LivetickerClient, NewsItem, Post, TopicFilter,
};
use crate::lexicon::{apply_exclusions, compile_matcher, load_lexicon, ExclusionList, Lexicon, MatchResult, Matcher};
use crate::metrics::DateRange;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Wall-clock time the run stands for.
    pub now: DateTime<Utc>,
    pub trigger: Trigger,
    pub faults: FaultPlan,
    /// Overrides the HTTP client settings derived from the config.
    pub client: Option<ClientConfig>,
}

impl RunOptions {
    pub fn manual(now: DateTime<Utc>) -> Self {
        RunOptions {
            now,
            trigger: Trigger::Manual,
            faults: FaultPlan::none(),
            client: None,
        }
    }
}

fn last_processed_day(cfg: &PipelineConfig, now: DateTime<Utc>) -> NaiveDate {
    let today = now.with_timezone(&cfg.tz).date_naive();
    today - Days::new(cfg.lag_days as u64)
}

/// Monitoring days processed at `now`: from the configured start through
/// the last complete day allowed by the lag. `None` before the first one.
pub fn analysis_window(cfg: &PipelineConfig, now: DateTime<Utc>) -> Option<DateRange> {
    let last = last_processed_day(cfg, now);
    let end = cfg.monitor_end.map_or(last, |e| e.min(last));
    DateRange::new(cfg.monitor_start, end)
}

/// Items published at or after this instant are left for a later run.
fn item_cutoff(cfg: &PipelineConfig, now: DateTime<Utc>) -> DateTime<Utc> {
    let next = last_processed_day(cfg, now) + Days::new(1);
    let midnight = next.and_hms_opt(0, 0, 0).expect("midnight");
    cfg.tz
        .from_local_datetime(&midnight)
        .earliest()
        .map(|t| t.with_timezone(&Utc))
        .unwrap_or_else(|| midnight.and_utc())
}

fn expand_lexicon_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| PipelineError::io(p, e))?
                .flatten()
                .map(|e| e.path())
                .filter(|f| f.extension().is_some_and(|x| x == "txt"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn with_exclusions(lex: &Lexicon, files: &[PathBuf], label: &str) -> Result<Lexicon, PipelineError> {
    if files.is_empty() {
        return Ok(lex.clone());
    }
    let mut list = ExclusionList::default();
    for f in files {
        list.extend(&ExclusionList::load(f)?);
    }
    let (out, report) = apply_exclusions(lex, &list);
    for (cat, n) in &report.removed {
        log::info!("{label}: {n} {cat} entries removed");
    }
    for (cat, term) in &report.unresolved {
        log::warn!("{label}: exclusion {cat}\t{term} matches no entry");
    }
    Ok(out)
}

/// One compiled matcher per post source, keyed by source name.
pub fn load_matchers(cfg: &PipelineConfig) -> Result<BTreeMap<String, Matcher>, PipelineError> {
    let files = expand_lexicon_paths(&cfg.lexicon.paths)?;
    let lex = load_lexicon(&files)?;
    if cfg.lexicon.require_core {
        let missing = lex.missing_core_categories();
        if !missing.is_empty() {
            return Err(PipelineError::Config(format!("lexicon lacks core categories {missing:?}")));
        }
    }
    let common = with_exclusions(&lex, &cfg.lexicon.exclusions, "common exclusions")?;
    let mut out = BTreeMap::new();
    for s in cfg.sources.iter().filter(|s| !s.is_aggregate()) {
        let lex = with_exclusions(&common, &s.exclusions, &s.name)?;
        out.insert(s.name.clone(), compile_matcher(&lex)?);
    }
    Ok(out)
}

fn anonymized(cfg: &PipelineConfig, source: &SourceConfig, mut p: Post) -> Post {
    p.platform = source.platform;
    p.author = p.author.map(|a| anonymize_author(&cfg.author_salt, &a));
    p
}

fn client_config(cfg: &PipelineConfig, opts: &RunOptions) -> ClientConfig {
    opts.client.clone().unwrap_or_else(|| ClientConfig {
        min_interval: Duration::from_millis(cfg.request_interval_ms),
        ..ClientConfig::default()
    })
}

/// Brings one source's new data into the store.
///
/// An error means the source produced nothing usable this run; failures of
/// single items are recorded in `report` instead.
pub fn ingest_source(
    cfg: &PipelineConfig,
    store: &Store,
    source: &SourceConfig,
    opts: &RunOptions,
    report: &mut SourceReport,
) -> Result<(), PipelineError> {
    let faults = &opts.faults;
    match &source.kind {
        SourceKind::Http { url, topic } => {
            let client = LivetickerClient::new(url.clone(), client_config(cfg, opts));
            let filter = match topic {
                Some(t) => TopicFilter::pattern(t).map_err(|e| PipelineError::Config(e.to_string()))?,
                None => TopicFilter::all(),
            };
            let tickers = client.discover_tickers(&filter, opts.now)?;
            report.tickers_seen = tickers.len() as u64;
            let known = store.fetched_items()?;
            let cutoff = item_cutoff(cfg, opts.now);
            let mut todo: BTreeMap<String, NewsItem> = BTreeMap::new();
            for t in &tickers {
                match client.fetch_news_items(t) {
                    Ok(items) => {
                        report.items_seen += items.len() as u64;
                        for i in items {
                            if !known.contains_key(&i.id) && i.published_at < cutoff {
                                todo.entry(i.id.clone()).or_insert(i);
                            }
                        }
                    }
                    Err(e) => report.errors.push(format!("ticker {}: {e}", t.ticker_id)),
                }
            }
            if !tickers.is_empty() && report.errors.len() == tickers.len() {
                return Err(PipelineError::Publish(format!("no ticker of {} answered", source.name)));
            }

            let batch = cfg.batch_size;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
            let fetched: Vec<(NewsItem, Result<Vec<Post>, _>)> = pool.install(|| {
                todo.into_values()
                    .collect::<Vec<_>>()
                    .into_par_iter()
                    .map(|item| {
                        let r = client.fetch_posts(&item.id, batch);
                        (item, r)
                    })
                    .collect()
            });

            let mut ids = store.post_ids(source.platform)?;
            let attempted = fetched.len();
            for (mut item, result) in fetched {
                match result {
                    Ok(posts) => {
                        let posts: Vec<Post> = posts.into_iter().map(|p| anonymized(cfg, source, p)).collect();
                        item.observe_first_post(&posts);
                        let added = store.append_posts(source.platform, &posts, &mut ids)?;
                        faults.checkpoint(&format!("posts of item {}", item.id))?;
                        store.record_item(&ItemRecord {
                            item,
                            source: source.name.clone(),
                            posts: posts.len() as u64,
                            fetched_at: opts.now,
                        })?;
                        faults.checkpoint("item recorded")?;
                        report.items_fetched += 1;
                        report.posts_added += added as u64;
                    }
                    Err(e) => {
                        report.items_failed += 1;
                        report.errors.push(format!("item {}: {e}", item.id));
                    }
                }
            }
            if attempted > 0 && report.items_fetched == 0 {
                return Err(PipelineError::Publish(format!("all {attempted} items of {} failed", source.name)));
            }
        }
        SourceKind::Tsv { path } => {
            let ing = ingest_tsv(path)?;
            report.rejects = ing.rejects.len() as u64;
            if !ing.rejects.is_empty() {
                ing.write_rejects(&store.rejects_path(&source.name))?;
                log::warn!("{}: {} rows rejected", path.display(), ing.rejects.len());
            }
            let posts: Vec<Post> = ing
                .posts
                .into_iter()
                .filter(|p| {
                    let ok = p.platform == source.platform;
                    if !ok {
                        log::warn!("{}: post {} is {}, expected {}", path.display(), p.id, p.platform, source.platform);
                    }
                    ok
                })
                .map(|p| anonymized(cfg, source, p))
                .collect();
            let mut ids = store.post_ids(source.platform)?;
            report.posts_added = store.append_posts(source.platform, &posts, &mut ids)? as u64;
            faults.checkpoint("tsv appended")?;
        }
        SourceKind::Aggregates { path } => {
            let ing = ingest_aggregates(path)?;
            report.rejects = ing.rejects.len() as u64;
            if !ing.rejects.is_empty() {
                ing.write_rejects(&store.rejects_path(&source.name))?;
                log::warn!("{}: {} rows rejected", path.display(), ing.rejects.len());
            }
        }
    }
    Ok(())
}

/// Loads every source's data from the store, matching posts the cache has
/// not seen yet.
pub fn prepare_sources<'a>(
    cfg: &'a PipelineConfig,
    store: &Store,
    matchers: &'a BTreeMap<String, Matcher>,
    faults: &FaultPlan,
) -> Result<Vec<SourceData<'a>>, PipelineError> {
    let mut out = Vec::new();
    for source in &cfg.sources {
        if let SourceKind::Aggregates { path } = &source.kind {
            let aggregates = match ingest_aggregates(path) {
                Ok(a) => a.rows,
                Err(e) => {
                    log::warn!("{}: {e}", source.name);
                    Vec::new()
                }
            };
            out.push(SourceData {
                source,
                matcher: None,
                posts: Vec::new(),
                matches: Vec::new(),
                aggregates,
            });
            continue;
        }
        let m = &matchers[&source.name];
        let posts = store.posts(source.platform)?;
        let mut cache = store.load_matches(source.platform, m.fingerprint())?;
        let fresh = cache.is_empty();
        let missing: Vec<&Post> = posts.iter().filter(|p| !cache.contains_key(&p.id)).collect();
        let computed: Vec<(&str, MatchResult)> = missing.par_iter().map(|p| (p.id.as_str(), m.match_text(&p.text))).collect();
        if fresh || !computed.is_empty() {
            let refs: Vec<(&str, &MatchResult)> = computed.iter().map(|(id, r)| (*id, r)).collect();
            store.append_matches(source.platform, m.fingerprint(), fresh, &refs)?;
            faults.checkpoint("match cache appended")?;
        }
        let computed: HashMap<&str, MatchResult> = computed.into_iter().collect();
        let matches = posts
            .iter()
            .map(|p| {
                cache
                    .remove(&p.id)
                    .or_else(|| computed.get(p.id.as_str()).cloned())
                    .expect("every post matched")
            })
            .collect();
        out.push(SourceData {
            source,
            matcher: Some(m),
            posts,
            matches,
            aggregates: Vec::new(),
        });
    }
    Ok(out)
}

fn items_by_source(store: &Store) -> Result<BTreeMap<String, Vec<NewsItem>>, PipelineError> {
    let mut out: BTreeMap<String, Vec<NewsItem>> = BTreeMap::new();
    for rec in store.fetched_items()?.into_values() {
        out.entry(rec.source).or_default().push(rec.item);
    }
    Ok(out)
}

/// Builds every export from what the store holds, without ingesting.
pub fn compute_artifacts(
    cfg: &PipelineConfig,
    store: &Store,
    matchers: &BTreeMap<String, Matcher>,
    now: DateTime<Utc>,
    faults: &FaultPlan,
) -> Result<Artifacts, PipelineError> {
    let data = prepare_sources(cfg, store, matchers, faults)?;
    build_artifacts(cfg, &data, &items_by_source(store)?, analysis_window(cfg, now), now)
}

fn elapsed_since(start: DateTime<Utc>, clock: Instant) -> DateTime<Utc> {
    start + chrono::Duration::from_std(clock.elapsed()).unwrap_or_default()
}

/// One complete update: ingest every source, rebuild all exports, commit
/// them as a new run and publish.
///
/// Fails with [`PipelineError::LockHeld`] while another run is active.
/// Other errors are recorded as a failed run and returned as its record;
/// a simulated crash returns the error without touching the ledger.
pub fn run_daily(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunRecord, PipelineError> {
    fs::create_dir_all(&cfg.state_dir).map_err(|e| PipelineError::io(&cfg.state_dir, e))?;
    let lock_path = cfg.state_dir.join("run.lock");
    let _lock = FileLock::try_acquire(&lock_path)?.ok_or(PipelineError::LockHeld(lock_path))?;
    run_locked(cfg, opts)
}

/// [`run_daily`] for a caller already holding the run lock.
pub(crate) fn run_locked(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunRecord, PipelineError> {
    let ledger = Ledger::new(&cfg.state_dir);
    let clock = Instant::now();
    let mut reports = Vec::new();
    match execute(cfg, opts, &ledger, &mut reports, clock) {
        Ok(rec) => Ok(rec),
        Err(e @ PipelineError::Crashed { .. }) => Err(e),
        Err(e) => {
            log::error!("run failed: {e}");
            let floor = numeric_dirs(&artifacts_root(&cfg.state_dir)).last().copied().unwrap_or(0);
            ledger.append_with(floor, |id, previous, _| {
                Ok(RunRecord {
                    run_id: id,
                    kind: RecordKind::Run,
                    trigger: opts.trigger,
                    started_at: opts.now,
                    finished_at: elapsed_since(opts.now, clock),
                    status: RunStatus::Failed,
                    sources: reports,
                    digests: None,
                    previous,
                    restored: None,
                    note: Some(e.to_string()),
                })
            })
        }
    }
}

fn execute(
    cfg: &PipelineConfig,
    opts: &RunOptions,
    ledger: &Ledger,
    reports: &mut Vec<SourceReport>,
    clock: Instant,
) -> Result<RunRecord, PipelineError> {
    let faults = &opts.faults;
    let store = Store::open(&cfg.state_dir)?;
    clean_staging(&cfg.state_dir)?;
    let matchers = load_matchers(cfg)?;
    faults.checkpoint("lexicon loaded")?;

    for source in &cfg.sources {
        let mut rep = SourceReport {
            name: source.name.clone(),
            platform: Some(source.platform),
            ..Default::default()
        };
        match ingest_source(cfg, &store, source, opts, &mut rep) {
            Ok(()) => {}
            Err(e @ PipelineError::Crashed { .. }) => return Err(e),
            Err(e) => {
                log::warn!("source {} failed: {e}", source.name);
                rep.failed = true;
                rep.errors.push(e.to_string());
            }
        }
        reports.push(rep);
        faults.checkpoint(&format!("source {} done", source.name))?;
    }

    let artifacts = compute_artifacts(cfg, &store, &matchers, opts.now, faults)?;
    let staging = new_staging(&cfg.state_dir)?;
    artifacts.write_to(&staging, faults)?;
    let digests = artifacts.digests();
    let status = if reports.iter().any(|r| r.failed) {
        RunStatus::Partial
    } else {
        RunStatus::Success
    };
    let reports = std::mem::take(reports);
    let rec = commit(cfg, ledger, &staging, faults, |id, previous| RunRecord {
        run_id: id,
        kind: RecordKind::Run,
        trigger: opts.trigger,
        started_at: opts.now,
        finished_at: elapsed_since(opts.now, clock),
        status,
        sources: reports,
        digests: Some(digests),
        previous,
        restored: None,
        note: None,
    })?;
    publish(cfg, rec.run_id, true, faults)?;
    prune(cfg)?;
    Ok(rec)
}
