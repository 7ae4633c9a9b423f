use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::{local_date, stable_mean, stable_sum, DateRange};
use crate::ingest::{AggregateDaily, NewsItem, Platform, Post};
use crate::lexicon::MatchResult;

/// Corpus figures for one platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformStats {
    pub platform: Platform,
    pub posts: u64,
    pub window: DateRange,
    pub mean_posts_per_day: f64,
    /// `None` when only counts are available.
    pub unique_authors: Option<u64>,
    /// Share of posts with at least one hit, per category.
    pub fractions: BTreeMap<String, f64>,
    pub median_char_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub platforms: Vec<PlatformStats>,
    pub items: u64,
    pub median_first_post_latency_s: Option<f64>,
    pub posts_per_item_mean: Option<f64>,
    /// Population standard deviation.
    pub posts_per_item_sd: Option<f64>,
}

/// Median with the two middle values averaged for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    let mean = stable_mean(values)?;
    let n = values.len() as f64;
    let var = stable_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    Some((mean, var.sqrt()))
}

/// Table-style corpus statistics over posts inside `window`.
///
/// Fractions are the share of posts with at least one hit in each of
/// `categories`. Item figures cover items published inside the window;
/// posts are attached to items through `parent_item`.
pub fn descriptive_stats(
    posts: &[(&Post, &MatchResult)],
    items: &[NewsItem],
    categories: &[String],
    window: DateRange,
    tz: Tz,
) -> StatsTable {
    let in_window: Vec<&(&Post, &MatchResult)> = posts.iter().filter(|(p, _)| window.contains(local_date(p, tz))).collect();
    let platforms: BTreeSet<Platform> = in_window.iter().map(|(p, _)| p.platform).collect();

    let platform_stats = platforms
        .into_iter()
        .map(|platform| {
            let rows: Vec<_> = in_window.iter().filter(|(p, _)| p.platform == platform).collect();
            let n = rows.len() as u64;
            let authors: HashSet<&str> = rows.iter().filter_map(|(p, _)| p.author.as_deref()).collect();
            let fractions = categories
                .iter()
                .map(|c| {
                    let hits = rows.iter().filter(|(_, mr)| mr.category_count(c) > 0).count();
                    (c.clone(), hits as f64 / n as f64)
                })
                .collect();
            let lengths: Vec<f64> = rows.iter().map(|(p, _)| p.char_length() as f64).collect();
            PlatformStats {
                platform,
                posts: n,
                window,
                mean_posts_per_day: n as f64 / window.days() as f64,
                unique_authors: Some(authors.len() as u64),
                fractions,
                median_char_length: median(&lengths),
            }
        })
        .collect();

    let items: Vec<&NewsItem> = items
        .iter()
        .filter(|i| window.contains(i.published_at.with_timezone(&tz).date_naive()))
        .collect();
    let mut per_item: BTreeMap<&str, u64> = items.iter().map(|i| (i.id.as_str(), 0)).collect();
    for (p, _) in &in_window {
        if let Some(n) = p.parent_item.as_deref().and_then(|id| per_item.get_mut(id)) {
            *n += 1;
        }
    }
    let counts: Vec<f64> = per_item.values().map(|&n| n as f64).collect();
    let latencies: Vec<f64> = items.iter().filter_map(|i| i.first_post_latency()).collect();
    let ms = mean_sd(&counts);

    StatsTable {
        platforms: platform_stats,
        items: items.len() as u64,
        median_first_post_latency_s: median(&latencies),
        posts_per_item_mean: ms.map(|(m, _)| m),
        posts_per_item_sd: ms.map(|(_, s)| s),
    }
}

/// Statistics for a platform known only through daily aggregates.
///
/// A day's post total is the largest `posts_total` reported for it, since
/// each category row repeats the day's total.
pub fn aggregate_platform_stats(platform: Platform, rows: &[AggregateDaily], window: DateRange) -> PlatformStats {
    let rows: Vec<&AggregateDaily> = rows.iter().filter(|r| window.contains(r.date)).collect();
    let mut per_day: BTreeMap<_, u64> = BTreeMap::new();
    let mut per_cat: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in &rows {
        let t = per_day.entry(r.date).or_default();
        *t = (*t).max(r.posts_total);
        let c = per_cat.entry(&r.category).or_default();
        c.0 += r.posts_matching;
        c.1 += r.posts_total;
    }
    let posts: u64 = per_day.values().sum();
    PlatformStats {
        platform,
        posts,
        window,
        mean_posts_per_day: posts as f64 / window.days() as f64,
        unique_authors: None,
        fractions: per_cat
            .into_iter()
            .filter(|(_, (_, t))| *t > 0)
            .map(|(c, (m, t))| (c.to_string(), m as f64 / t as f64))
            .collect(),
        median_char_length: None,
    }
}
