use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::ledger::{Ledger, RecordKind, RunRecord, RunStatus, Trigger};
use super::lock::FileLock;
use super::{FaultPlan, PipelineError};

/// Ledger snapshot stored next to each artifact set; not covered by digests.
pub(crate) const RUNS_FILE: &str = "runs.json";

pub(crate) fn artifacts_root(state: &Path) -> PathBuf {
    state.join("artifacts")
}

fn unique_suffix() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("{}-{nanos}", std::process::id())
}

pub(crate) fn new_staging(state: &Path) -> Result<PathBuf, PipelineError> {
    let dir = artifacts_root(state).join(format!("staging-{}", unique_suffix()));
    fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    Ok(dir)
}

/// Removes staging directories left by interrupted runs. Call with the run
/// lock held.
pub(crate) fn clean_staging(state: &Path) -> Result<(), PipelineError> {
    let root = artifacts_root(state);
    let Ok(rd) = fs::read_dir(&root) else {
        return Ok(());
    };
    for e in rd.flatten() {
        if e.file_name().to_string_lossy().starts_with("staging-") {
            log::info!("removing leftover {}", e.path().display());
            fs::remove_dir_all(e.path()).map_err(|err| PipelineError::io(&e.path(), err))?;
        }
    }
    Ok(())
}

pub(crate) fn numeric_dirs(dir: &Path) -> Vec<u64> {
    let mut ids: Vec<u64> = fs::read_dir(dir)
        .map(|rd| {
            rd.flatten()
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().to_str().and_then(|n| n.parse().ok()))
                .collect()
        })
        .unwrap_or_default();
    ids.sort_unstable();
    ids
}

/// Runs whose artifact sets are still retained and recorded in the ledger.
pub fn available_runs(cfg: &PipelineConfig) -> Result<Vec<u64>, PipelineError> {
    let committed: BTreeSet<u64> = Ledger::new(&cfg.state_dir)
        .read()?
        .into_iter()
        .filter(|r| r.digests.is_some())
        .map(|r| r.run_id)
        .collect();
    Ok(numeric_dirs(&artifacts_root(&cfg.state_dir))
        .into_iter()
        .filter(|id| committed.contains(id))
        .collect())
}

/// sha256 of every file below `dir` by `/`-separated relative path,
/// leaving out the ledger snapshot.
pub fn digest_dir(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), PipelineError> {
        for e in fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
            let path = e.map_err(|e| PipelineError::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .expect("below root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel == RUNS_FILE {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            out.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn copy_dir(src: &Path, dst: &Path, faults: &FaultPlan) -> Result<(), PipelineError> {
    fs::create_dir_all(dst).map_err(|e| PipelineError::io(dst, e))?;
    let mut entries: Vec<_> = fs::read_dir(src)
        .map_err(|e| PipelineError::io(src, e))?
        .flatten()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        let target = dst.join(path.file_name().expect("entry name"));
        if path.is_dir() {
            copy_dir(&path, &target, faults)?;
        } else {
            fs::copy(&path, &target).map_err(|e| PipelineError::io(&path, e))?;
            faults.checkpoint(&format!("copied {}", target.display()))?;
        }
    }
    Ok(())
}

/// Points `link` at `target` with a single rename. An existing empty real
/// directory is replaced; a non-empty one is left alone and reported.
fn swap_symlink(link: &Path, target: &Path) -> Result<(), PipelineError> {
    if let Ok(meta) = fs::symlink_metadata(link) {
        if !meta.file_type().is_symlink() {
            if meta.is_dir() && fs::read_dir(link).map(|mut d| d.next().is_none()).unwrap_or(false) {
                fs::remove_dir(link).map_err(|e| PipelineError::io(link, e))?;
            } else {
                return Err(PipelineError::Publish(format!(
                    "{} exists and is not a symlink; move it away first",
                    link.display()
                )));
            }
        }
    }
    if let Some(parent) = link.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let name = link.file_name().expect("link has a name").to_string_lossy();
    let tmp = link.with_file_name(format!(".{name}.swap-{}", unique_suffix()));
    std::os::unix::fs::symlink(target, &tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, link).map_err(|e| PipelineError::io(link, e))
}

fn releases_dir(cfg: &PipelineConfig) -> PathBuf {
    let name = cfg.publish_dir.file_name().expect("publish dir has a name").to_string_lossy();
    cfg.publish_dir.with_file_name(format!("{name}.releases"))
}

/// Run id of the artifact set currently behind the publish directory.
pub fn published_run(cfg: &PipelineConfig) -> Option<u64> {
    fs::read_link(&cfg.publish_dir)
        .ok()
        .and_then(|t| t.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse().ok()))
}

/// Turns a staging directory into artifact set `<id>` and appends the
/// ledger record built by `make`. The append is the commit point.
pub(crate) fn commit<F>(
    cfg: &PipelineConfig,
    ledger: &Ledger,
    staging: &Path,
    faults: &FaultPlan,
    make: F,
) -> Result<RunRecord, PipelineError>
where
    F: FnOnce(u64, Option<u64>) -> RunRecord,
{
    let root = artifacts_root(&cfg.state_dir);
    let floor = numeric_dirs(&root).last().copied().unwrap_or(0);
    let rec = ledger.append_with(floor, |id, prev, history| {
        let dst = root.join(id.to_string());
        fs::rename(staging, &dst).map_err(|e| PipelineError::io(&dst, e))?;
        faults.checkpoint("artifact set renamed")?;
        let rec = make(id, prev);
        let mut all = history.to_vec();
        all.push(rec.clone());
        let runs = serde_json::to_string_pretty(&all).expect("ledger serialize") + "\n";
        let path = dst.join(RUNS_FILE);
        fs::write(&path, runs).map_err(|e| PipelineError::io(&path, e))?;
        faults.checkpoint("ledger snapshot written")?;
        Ok(rec)
    })?;
    faults.checkpoint("ledger appended")?;
    Ok(rec)
}

/// Copies artifact set `id` into the releases area and swaps the publish
/// link to it; with `update_out` the output link follows as well.
pub(crate) fn publish(cfg: &PipelineConfig, id: u64, update_out: bool, faults: &FaultPlan) -> Result<(), PipelineError> {
    let set = artifacts_root(&cfg.state_dir).join(id.to_string());
    if update_out {
        swap_symlink(&cfg.out_dir, &set)?;
        faults.checkpoint("output link swapped")?;
    }
    let releases = releases_dir(cfg);
    let partial = releases.join(format!("{id}.partial"));
    let done = releases.join(id.to_string());
    for stale in [&partial, &done] {
        if stale.exists() {
            fs::remove_dir_all(stale).map_err(|e| PipelineError::io(stale, e))?;
        }
    }
    copy_dir(&set, &partial, faults)?;
    fs::rename(&partial, &done).map_err(|e| PipelineError::io(&done, e))?;
    faults.checkpoint("release complete")?;
    swap_symlink(&cfg.publish_dir, &done)?;
    faults.checkpoint("publish link swapped")?;

    if let Some(hook) = &cfg.publish_hook {
        match std::process::Command::new("sh")
            .arg("-c")
            .arg(hook)
            .env("PULSEMON_RUN_ID", id.to_string())
            .env("PULSEMON_PUBLISH_DIR", &cfg.publish_dir)
            .status()
        {
            Ok(s) if s.success() => {}
            Ok(s) => log::warn!("publish hook exited with {s}"),
            Err(e) => log::warn!("publish hook did not start: {e}"),
        }
    }
    Ok(())
}

/// Drops artifact sets and releases beyond the newest `retain_runs`, never
/// touching what the output and publish links point at.
pub(crate) fn prune(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut keep: BTreeSet<u64> = published_run(cfg).into_iter().collect();
    if let Some(id) = fs::read_link(&cfg.out_dir)
        .ok()
        .and_then(|t| t.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse().ok()))
    {
        keep.insert(id);
    }
    for dir in [artifacts_root(&cfg.state_dir), releases_dir(cfg)] {
        let ids = numeric_dirs(&dir);
        let cut = ids.len().saturating_sub(cfg.retain_runs);
        for id in &ids[..cut] {
            if keep.contains(id) {
                continue;
            }
            let p = dir.join(id.to_string());
            fs::remove_dir_all(&p).map_err(|e| PipelineError::io(&p, e))?;
        }
    }
    Ok(())
}

/// Restores the publication of `run_id` and records it as a new ledger
/// entry. The post store is left alone.
pub fn rollback(cfg: &PipelineConfig, run_id: u64, now: DateTime<Utc>) -> Result<RunRecord, PipelineError> {
    fs::create_dir_all(&cfg.state_dir).map_err(|e| PipelineError::io(&cfg.state_dir, e))?;
    let lock_path = cfg.state_dir.join("run.lock");
    let _lock = FileLock::try_acquire(&lock_path)?.ok_or_else(|| PipelineError::LockHeld(lock_path.clone()))?;
    let ledger = Ledger::new(&cfg.state_dir);
    let available = available_runs(cfg)?;
    let unknown = || PipelineError::UnknownRun {
        run: run_id,
        available: available.clone(),
    };
    if !available.contains(&run_id) {
        return Err(unknown());
    }
    let target = ledger
        .read()?
        .into_iter()
        .find(|r| r.run_id == run_id)
        .and_then(|r| r.digests)
        .ok_or_else(unknown)?;
    let set = artifacts_root(&cfg.state_dir).join(run_id.to_string());
    if digest_dir(&set)? != target {
        return Err(PipelineError::Publish(format!(
            "artifact set {} no longer matches its recorded digests",
            set.display()
        )));
    }
    clean_staging(&cfg.state_dir)?;
    let staging = new_staging(&cfg.state_dir)?;
    let faults = FaultPlan::none();
    copy_dir(&set, &staging, &faults)?;
    let stale = staging.join(RUNS_FILE);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| PipelineError::io(&stale, e))?;
    }
    let rec = commit(cfg, &ledger, &staging, &faults, |id, previous| RunRecord {
        run_id: id,
        kind: RecordKind::Rollback,
        trigger: Trigger::Manual,
        started_at: now,
        finished_at: now,
        status: RunStatus::Success,
        sources: Vec::new(),
        digests: Some(target.clone()),
        previous,
        restored: Some(run_id),
        note: Some(format!("publication restored to run {run_id}")),
    })?;
    publish(cfg, rec.run_id, false, &faults)?;
    prune(cfg)?;
    Ok(rec)
}
