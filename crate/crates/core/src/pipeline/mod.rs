//! The daily routine: fetch, match, compute, export, publish.
//!
//! State lives under the configured state directory:
//!
//! ```text
//! state/
//!   posts/<platform>/<YYYY-MM>.tsv   append-only post store
//!   fetched_items.tsv                news items already fetched
//!   matches/<platform>.jsonl         match cache, tied to a lexicon fingerprint
//!   rejects/<source>.tsv             rows refused by file ingestion
//!   ledger.jsonl                     run history
//!   artifacts/<run id>/              retained artifact sets
//! ```
//!
//! The output directory is a symlink to the newest artifact set; the
//! publish directory is a symlink into `<publish>.releases/`, swapped
//! atomically after each committed run or rollback.

mod artifacts;
mod config;
mod ledger;
mod lock;
mod publish;
mod run;
mod schedule;
mod serve;
mod store;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub use artifacts::{build_artifacts, Artifacts, SourceData, StatsExport};
pub use config::{LexiconConfig, PipelineConfig, SourceConfig, SourceKind};
pub use ledger::{Ledger, RecordKind, RunRecord, RunStatus, SourceReport, Trigger};
pub use lock::FileLock;
pub use publish::{available_runs, digest_dir, published_run, rollback};
pub use run::{analysis_window, compute_artifacts, ingest_source, load_matchers, prepare_sources, run_daily, RunOptions};
pub use schedule::{Clock, Scheduler, SimClock, SystemClock};
pub use serve::{serve, ServeHandle};
pub use store::{ItemRecord, Store};

use crate::ingest::IngestError;
use crate::lexicon::LexiconError;
use crate::metrics::MetricsError;
use crate::wordcloud::CloudError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("another run holds {0}")]
    LockHeld(PathBuf),
    #[error("run {run} has no retained artifacts; available: {available:?}")]
    UnknownRun { run: u64, available: Vec<u64> },
    #[error("{0}")]
    Publish(String),
    #[error("cannot serve: {0}")]
    Serve(String),
    #[error("simulated crash at checkpoint {n} ({label})")]
    Crashed { n: usize, label: String },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Simulated process death for crash testing.
///
/// A run passes numbered checkpoints; with `crash_at(n)` the n-th one
/// returns [`PipelineError::Crashed`] and the run unwinds without any
/// cleanup, leaving disk state as a killed process would.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    crash_at: Option<usize>,
    passed: Arc<AtomicUsize>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn crash_at(n: usize) -> Self {
        FaultPlan {
            crash_at: Some(n),
            passed: Arc::default(),
        }
    }

    /// Checkpoints reached so far.
    pub fn passed(&self) -> usize {
        self.passed.load(Ordering::SeqCst)
    }

    pub(crate) fn checkpoint(&self, label: &str) -> Result<(), PipelineError> {
        let n = self.passed.fetch_add(1, Ordering::SeqCst) + 1;
        if self.crash_at == Some(n) {
            log::debug!("crashing at checkpoint {n} ({label})");
            return Err(PipelineError::Crashed {
                n,
                label: label.to_string(),
            });
        }
        Ok(())
    }
}
