use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::IndicatorSeries;
use crate::ingest::Platform;

/// Version stamped into every exported document.
pub const SCHEMA_VERSION: u32 = 1;

/// Per-platform series document read by the dashboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesExport {
    pub schema_version: u32,
    pub platform: Platform,
    pub generated_at: DateTime<Utc>,
    pub categories: Vec<IndicatorSeries>,
}

impl SeriesExport {
    pub fn new(platform: Platform, generated_at: DateTime<Utc>, categories: Vec<IndicatorSeries>) -> Self {
        SeriesExport {
            schema_version: SCHEMA_VERSION,
            platform,
            generated_at,
            categories,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("series serialize") + "\n"
    }
}
