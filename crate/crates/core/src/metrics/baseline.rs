use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{stable_mean, DailyIndicator, DateRange, Metric, MetricsError};

/// How baseline days are grouped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// One mean per weekday.
    #[default]
    Weekday,
    /// One mean over the whole period, used for every weekday.
    Global,
}

/// Reference means, indexed Monday = 0 .. Sunday = 6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub category: String,
    pub metric: Metric,
    pub mode: BaselineMode,
    pub period: DateRange,
    pub weekday_means: [Option<f64>; 7],
    pub n_days: [u32; 7],
}

impl BaselineTable {
    pub fn for_date(&self, d: NaiveDate) -> Option<f64> {
        self.weekday_means[d.weekday().num_days_from_monday() as usize]
    }
}

/// Means of `history` values inside `period`, grouped per `mode`.
///
/// Values are summed in date order. Every row must belong to one
/// (category, metric) series.
pub fn compute_baseline(
    history: &[DailyIndicator],
    period: DateRange,
    mode: BaselineMode,
) -> Result<BaselineTable, MetricsError> {
    let mut rows: Vec<&DailyIndicator> = history.iter().filter(|d| period.contains(d.date)).collect();
    let Some(first) = rows.first() else {
        let category = history.first().map(|d| d.category.clone()).unwrap_or_default();
        return Err(MetricsError::EmptyBaseline { category, period });
    };
    let (category, metric) = (first.category.clone(), first.metric);
    if let Some(odd) = history.iter().find(|d| d.category != category || d.metric != metric) {
        return Err(MetricsError::MixedSeries {
            expected: format!("{category}/{metric}"),
            found: format!("{}/{}", odd.category, odd.metric),
        });
    }
    rows.sort_by_key(|d| d.date);

    let mut by_weekday: [Vec<f64>; 7] = Default::default();
    for d in &rows {
        by_weekday[d.weekday().num_days_from_monday() as usize].push(d.value);
    }
    let n_days = by_weekday.each_ref().map(|v| v.len() as u32);
    let weekday_means = match mode {
        BaselineMode::Weekday => by_weekday.each_ref().map(|v| stable_mean(v)),
        BaselineMode::Global => {
            let all: Vec<f64> = rows.iter().map(|d| d.value).collect();
            [stable_mean(&all); 7]
        }
    };
    Ok(BaselineTable {
        category,
        metric,
        mode,
        period,
        weekday_means,
        n_days,
    })
}

/// `100 * (value - baseline) / baseline`, or `None` when the baseline is not
/// a positive number.
///
/// Computed as `100 * (value / baseline - 1)` so that e.g. 0.06 against 0.04
/// comes out as exactly 50. When that form rounds to the wrong sign (or to
/// zero for unequal inputs) the direct difference is used instead, which
/// always has the sign of `value - baseline`.
pub fn relative_difference(value: f64, baseline: f64) -> Option<f64> {
    if !(baseline > 0.0 && baseline.is_finite()) || !value.is_finite() {
        return None;
    }
    if value == baseline {
        return Some(0.0);
    }
    let r = (value / baseline - 1.0) * 100.0;
    if r == 0.0 || (r > 0.0) != (value > baseline) {
        Some(100.0 * (value - baseline) / baseline)
    } else {
        Some(r)
    }
}

/// One point of an [`IndicatorSeries`]. A point whose `rel_pct` is `None`
/// is flagged: its baseline is zero or missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub date: NaiveDate,
    pub raw: f64,
    pub baseline: Option<f64>,
    pub rel_pct: Option<f64>,
    pub n: u64,
}

impl SeriesPoint {
    pub fn is_flagged(&self) -> bool {
        self.rel_pct.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub category: String,
    pub metric: Metric,
    pub points: Vec<SeriesPoint>,
}

/// Relative differences of `current` against `base`, in date order.
pub fn relative_series(current: &[DailyIndicator], base: &BaselineTable) -> IndicatorSeries {
    let mut points: Vec<SeriesPoint> = current
        .iter()
        .filter(|d| d.category == base.category && d.metric == base.metric)
        .map(|d| {
            let baseline = base.for_date(d.date);
            let rel_pct = baseline.and_then(|b| relative_difference(d.value, b));
            if rel_pct.is_none() {
                log::warn!("{} {} {}: baseline {baseline:?} unusable, point flagged", d.category, d.metric, d.date);
            }
            SeriesPoint {
                date: d.date,
                raw: d.value,
                baseline,
                rel_pct,
                n: d.n_posts,
            }
        })
        .collect();
    points.sort_by_key(|p| p.date);
    IndicatorSeries {
        category: base.category.clone(),
        metric: base.metric,
        points,
    }
}
