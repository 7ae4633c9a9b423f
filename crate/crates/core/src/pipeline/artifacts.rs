use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{PipelineConfig, SourceConfig};
use super::{FaultPlan, PipelineError};
use crate::ingest::{AggregateDaily, NewsItem, Post};
use crate::lexicon::{MatchResult, Matcher};
use crate::metrics::{
    aggregate_platform_stats, aggregate_values, compute_baseline, daily_values, descriptive_stats, local_date,
    relative_series, DailyIndicator, DateRange, IndicatorSeries, Metric, MetricsError, SeriesExport, SeriesPoint,
    StatsTable, SCHEMA_VERSION,
};
use crate::wordcloud::{cloud_weights, term_stats, CloudExport};

/// Everything one source contributes to the exports.
pub struct SourceData<'a> {
    pub source: &'a SourceConfig,
    /// `None` for aggregate feeds.
    pub matcher: Option<&'a Matcher>,
    pub posts: Vec<Post>,
    /// Aligned with `posts`.
    pub matches: Vec<MatchResult>,
    pub aggregates: Vec<AggregateDaily>,
}

impl SourceData<'_> {
    fn rows(&self) -> Vec<(&Post, &MatchResult)> {
        self.posts.iter().zip(&self.matches).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsExport {
    pub schema_version: u32,
    pub generated_at: DateTime<Utc>,
    pub window: Option<DateRange>,
    #[serde(flatten)]
    pub table: StatsTable,
}

/// Artifact files keyed by relative path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    fn put(&mut self, path: String, body: String) {
        self.files.insert(path, body.into_bytes());
    }

    pub fn digests(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(p, b)| (p.clone(), hex::encode(Sha256::digest(b))))
            .collect()
    }

    /// Writes every file below `dir`, passing a checkpoint after each.
    pub fn write_to(&self, dir: &Path, faults: &FaultPlan) -> Result<(), PipelineError> {
        for (rel, body) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
            fs::write(&path, body).map_err(|e| PipelineError::io(&path, e))?;
            faults.checkpoint(&format!("wrote {rel}"))?;
        }
        Ok(())
    }
}

fn without_baseline(category: &str, metric: Metric, current: &[DailyIndicator]) -> IndicatorSeries {
    IndicatorSeries {
        category: category.to_string(),
        metric,
        points: current
            .iter()
            .map(|d| SeriesPoint {
                date: d.date,
                raw: d.value,
                baseline: None,
                rel_pct: None,
                n: d.n_posts,
            })
            .collect(),
    }
}

fn series_for(
    cfg: &PipelineConfig,
    source: &SourceConfig,
    all: Vec<DailyIndicator>,
    category: &str,
    metric: Metric,
    window: Option<DateRange>,
) -> Result<IndicatorSeries, PipelineError> {
    let current: Vec<DailyIndicator> = all
        .iter()
        .filter(|d| window.is_some_and(|w| w.contains(d.date)))
        .cloned()
        .collect();
    match compute_baseline(&all, source.baseline, cfg.baseline_mode) {
        Ok(b) => Ok(relative_series(&current, &b)),
        Err(MetricsError::EmptyBaseline { .. }) => {
            log::warn!("{}: no {category} {metric} data in baseline {}", source.name, source.baseline);
            Ok(without_baseline(category, metric, &current))
        }
        Err(e) => Err(e.into()),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serialize") + "\n"
}

/// Builds the full export set from scratch.
///
/// `window` is the monitoring window processed so far (`None` before its
/// first day). Item statistics use `items`, matched to sources by name.
pub fn build_artifacts(
    cfg: &PipelineConfig,
    data: &[SourceData],
    items: &BTreeMap<String, Vec<NewsItem>>,
    window: Option<DateRange>,
    now: DateTime<Utc>,
) -> Result<Artifacts, PipelineError> {
    let mut out = Artifacts::default();
    let mut platforms = Vec::new();
    let mut item_table: Option<StatsTable> = None;

    for sd in data {
        let platform = sd.source.platform;
        let mut series = Vec::new();
        match sd.matcher {
            Some(m) => {
                let rows = sd.rows();
                let known = m.categories();
                for cat in known {
                    for metric in [Metric::MeanPostFrequency, Metric::ProportionMatching] {
                        let all = daily_values(&rows, known, cat, metric, cfg.tz)?;
                        series.push(series_for(cfg, sd.source, all, cat, metric, window)?);
                    }
                }
                let in_range = |r: DateRange| -> Vec<&MatchResult> {
                    rows.iter()
                        .filter(|(p, _)| r.contains(local_date(p, cfg.tz)))
                        .map(|(_, mr)| *mr)
                        .collect()
                };
                let live = window.map(in_range).unwrap_or_default();
                let base = in_range(sd.source.baseline);
                for cat in known {
                    let l = term_stats(m, live.iter().copied(), cat, "live")?;
                    let b = term_stats(m, base.iter().copied(), cat, "base")?;
                    let entries = cloud_weights(&l, &b, cfg.min_count)?;
                    out.put(
                        format!("clouds/{platform}/{cat}.json"),
                        CloudExport::new(cat, cfg.min_count, &entries).to_json(),
                    );
                }
                if let Some(w) = window {
                    let src_items = items.get(&sd.source.name).map(Vec::as_slice).unwrap_or_default();
                    let t = descriptive_stats(&rows, src_items, known, w, cfg.tz);
                    platforms.extend(t.platforms.iter().cloned());
                    if t.items > 0 && item_table.is_none() {
                        item_table = Some(t);
                    }
                }
            }
            None => {
                let values = aggregate_values(&sd.aggregates);
                let cats: BTreeSet<&str> = values.iter().map(|d| d.category.as_str()).collect();
                for cat in cats {
                    let all: Vec<DailyIndicator> = values.iter().filter(|d| d.category == cat).cloned().collect();
                    series.push(series_for(cfg, sd.source, all, cat, Metric::ProportionMatching, window)?);
                }
                if let Some(w) = window {
                    platforms.push(aggregate_platform_stats(platform, &sd.aggregates, w));
                }
            }
        }
        out.put(format!("series/{platform}.json"), SeriesExport::new(platform, now, series).to_json());
    }

    platforms.sort_by_key(|p| p.platform);
    let table = match item_table {
        Some(t) => StatsTable { platforms, ..t },
        None => StatsTable {
            platforms,
            items: 0,
            median_first_post_latency_s: None,
            posts_per_item_mean: None,
            posts_per_item_sd: None,
        },
    };
    out.put(
        "stats.json".into(),
        json(&StatsExport {
            schema_version: SCHEMA_VERSION,
            generated_at: now,
            window,
            table,
        }),
    );
    Ok(out)
}
