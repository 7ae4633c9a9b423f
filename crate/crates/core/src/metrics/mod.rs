//! Daily indicators, weekday baselines and relative-difference series.
//!
//! All functions are pure. Sums run in a fixed order (by date, then post id)
//! so parallel callers get bit-identical results.

mod baseline;
mod export;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::ingest::{AggregateDaily, Post};
use crate::lexicon::MatchResult;

pub use baseline::{
    compute_baseline, relative_difference, relative_series, BaselineMode, BaselineTable, IndicatorSeries, SeriesPoint,
};
pub use export::{SeriesExport, SCHEMA_VERSION};
pub use stats::{aggregate_platform_stats, descriptive_stats, median, mean_sd, PlatformStats, StatsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MeanPostFrequency,
    ProportionMatching,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::MeanPostFrequency => "mean_post_frequency",
            Metric::ProportionMatching => "proportion_matching",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_post_frequency" => Ok(Metric::MeanPostFrequency),
            "proportion_matching" => Ok(Metric::ProportionMatching),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Option<Self> {
        (start <= end).then_some(DateRange { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn days(&self) -> u32 {
        (self.end - self.start).num_days() as u32 + 1
    }

    pub fn iter(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyIndicator {
    pub date: NaiveDate,
    pub category: String,
    pub metric: Metric,
    pub value: f64,
    pub n_posts: u64,
}

impl DailyIndicator {
    pub fn weekday(&self) -> Weekday {
        self.date.weekday()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("no {category} values inside baseline period {period}")]
    EmptyBaseline { category: String, period: DateRange },
    #[error("baseline history mixes series: expected {expected}, found {found}")]
    MixedSeries { expected: String, found: String },
}

/// Compensated (Neumaier) sum, taken in iteration order.
pub fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Arithmetic mean taken around the first value, so a constant input comes
/// back unchanged. `None` for an empty slice.
pub fn stable_mean(values: &[f64]) -> Option<f64> {
    let &pivot = values.first()?;
    Some(pivot + stable_sum(values.iter().map(|v| v - pivot)) / values.len() as f64)
}

/// Category hits per token; `None` for a post without tokens.
pub fn post_frequency(mr: &MatchResult, category: &str) -> Option<f64> {
    if mr.token_count == 0 {
        return None;
    }
    Some(mr.category_count(category) as f64 / mr.token_count as f64)
}

/// Local calendar day of a post.
pub fn local_date(post: &Post, tz: Tz) -> NaiveDate {
    post.created_at.with_timezone(&tz).date_naive()
}

/// One indicator per local day that has at least one contributing post.
///
/// `known` is the category list of the matcher that produced the results.
/// Mean frequency skips zero-token posts; proportion counts every post.
pub fn daily_values(
    posts: &[(&Post, &MatchResult)],
    known: &[String],
    category: &str,
    metric: Metric,
    tz: Tz,
) -> Result<Vec<DailyIndicator>, MetricsError> {
    if !known.iter().any(|c| c == category) {
        return Err(MetricsError::UnknownCategory(category.to_string()));
    }
    let mut by_day: BTreeMap<NaiveDate, Vec<(&str, &MatchResult)>> = BTreeMap::new();
    for (post, mr) in posts {
        by_day.entry(local_date(post, tz)).or_default().push((&post.id, mr));
    }
    let mut out = Vec::with_capacity(by_day.len());
    for (date, mut day) in by_day {
        day.sort_by(|a, b| a.0.cmp(b.0));
        let (value, n) = match metric {
            Metric::MeanPostFrequency => {
                let freqs: Vec<f64> = day.iter().filter_map(|(_, mr)| post_frequency(mr, category)).collect();
                let Some(mean) = stable_mean(&freqs) else {
                    continue;
                };
                (mean, freqs.len() as u64)
            }
            Metric::ProportionMatching => {
                let hits = day.iter().filter(|(_, mr)| mr.category_count(category) > 0).count();
                (hits as f64 / day.len() as f64, day.len() as u64)
            }
        };
        out.push(DailyIndicator {
            date,
            category: category.to_string(),
            metric,
            value,
            n_posts: n,
        });
    }
    Ok(out)
}

/// Proportion indicators from pre-aggregated counts, ordered by category then
/// date. Days without posts are skipped.
pub fn aggregate_values(agg: &[AggregateDaily]) -> Vec<DailyIndicator> {
    let mut out: Vec<DailyIndicator> = agg
        .iter()
        .filter_map(|a| {
            if a.posts_total == 0 {
                log::warn!("{} {}: posts_total is 0, day skipped", a.date, a.category);
                return None;
            }
            Some(DailyIndicator {
                date: a.date,
                category: a.category.clone(),
                metric: Metric::ProportionMatching,
                value: a.posts_matching as f64 / a.posts_total as f64,
                n_posts: a.posts_total,
            })
        })
        .collect();
    out.sort_by(|a, b| a.category.cmp(&b.category).then(a.date.cmp(&b.date)));
    out
}
