use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::lock::FileLock;
use super::store::{open_for_append, read_complete_lines};
use super::PipelineError;
use crate::ingest::Platform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Run,
    Rollback,
    Skipped,
}

/// What started a run. Scheduled and catch-up runs carry the slot they
/// stand for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trigger {
    Manual,
    Scheduled { slot: DateTime<Utc> },
    CatchUp { slot: DateTime<Utc> },
}

impl Trigger {
    pub fn slot(&self) -> Option<DateTime<Utc>> {
        match self {
            Trigger::Manual => None,
            Trigger::Scheduled { slot } | Trigger::CatchUp { slot } => Some(*slot),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    /// Artifacts were published but at least one source failed.
    Partial,
    Failed,
    Skipped,
}

impl RunStatus {
    /// Process exit code for this outcome.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success | RunStatus::Skipped => 0,
            RunStatus::Partial => 1,
            RunStatus::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceReport {
    pub name: String,
    pub platform: Option<Platform>,
    pub tickers_seen: u64,
    pub items_seen: u64,
    pub items_fetched: u64,
    pub items_failed: u64,
    pub posts_added: u64,
    pub rejects: u64,
    pub failed: bool,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub kind: RecordKind,
    pub trigger: Trigger,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceReport>,
    /// sha256 per artifact path; present exactly when artifacts were
    /// committed.
    pub digests: Option<BTreeMap<String, String>>,
    pub previous: Option<u64>,
    /// Run whose artifacts a rollback restored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Append-only JSON-lines run history.
#[derive(Debug, Clone)]
pub struct Ledger {
    path: PathBuf,
    lock: PathBuf,
}

impl Ledger {
    pub fn new(state_dir: &Path) -> Self {
        Ledger {
            path: state_dir.join("ledger.jsonl"),
            lock: state_dir.join("ledger.lock"),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read(&self) -> Result<Vec<RunRecord>, PipelineError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let text = read_complete_lines(&self.path)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| PipelineError::Ledger(format!("{}:{}: {e}", self.path.display(), i + 1)))
            })
            .collect()
    }

    /// Appends one record under the ledger lock.
    ///
    /// `build` receives the next run id (above every id in the ledger and
    /// above `floor`) and the id of the last record; whatever it does happens
    /// before the line is written.
    pub fn append_with<F>(&self, floor: u64, build: F) -> Result<RunRecord, PipelineError>
    where
        F: FnOnce(u64, Option<u64>, &[RunRecord]) -> Result<RunRecord, PipelineError>,
    {
        let _guard = FileLock::acquire(&self.lock)?;
        let history = self.read()?;
        let last = history.last().map(|r| r.run_id);
        let next = last.unwrap_or(0).max(floor) + 1;
        let rec = build(next, last, &history)?;
        debug_assert_eq!(rec.run_id, next);
        let line = serde_json::to_string(&rec).expect("record serialize");
        let mut f = open_for_append(&self.path, None)?;
        writeln!(f, "{line}")
            .and_then(|_| f.sync_data())
            .map_err(|e| PipelineError::io(&self.path, e))?;
        Ok(rec)
    }
}
