use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Days, NaiveDate, TimeZone, Utc};

use super::ledger::{Ledger, RecordKind, RunRecord, RunStatus, Trigger};
use super::lock::FileLock;
use super::publish::{artifacts_root, numeric_dirs};
use super::run::{run_locked, RunOptions};
use super::{FaultPlan, PipelineConfig, PipelineError};
use crate::ingest::ClientConfig;

/// Source of time for the scheduler.
pub trait Clock {
    fn now(&self) -> DateTime<Utc>;
    /// Blocks until `t`. Returns false when the clock will not get there.
    fn sleep_until(&self, t: DateTime<Utc>) -> bool;
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> DateTime<Utc> {
        (**self).now()
    }
    fn sleep_until(&self, t: DateTime<Utc>) -> bool {
        (**self).sleep_until(t)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, t: DateTime<Utc>) -> bool {
        loop {
            let left = t - Utc::now();
            if left <= chrono::Duration::zero() {
                return true;
            }
            let step = left.to_std().unwrap_or_default().min(Duration::from_secs(60));
            std::thread::sleep(step);
        }
    }
}

/// Virtual time that jumps straight to each wake-up and stops at `end`.
#[derive(Debug)]
pub struct SimClock {
    now: Mutex<DateTime<Utc>>,
    end: DateTime<Utc>,
}

impl SimClock {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        SimClock {
            now: Mutex::new(start),
            end,
        }
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.now.lock().unwrap() = t;
    }
}

impl Clock for SimClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, t: DateTime<Utc>) -> bool {
        let mut now = self.now.lock().unwrap();
        if t > self.end {
            *now = self.end;
            return false;
        }
        *now = t.max(*now);
        true
    }
}

/// How late a wake-up may be and still count as on time.
const ON_TIME: chrono::Duration = chrono::Duration::minutes(1);

/// Runs the daily update once per local day at the configured time.
pub struct Scheduler<'a, C: Clock> {
    cfg: &'a PipelineConfig,
    clock: C,
    client: Option<ClientConfig>,
}

impl<'a, C: Clock> Scheduler<'a, C> {
    pub fn new(cfg: &'a PipelineConfig, clock: C) -> Self {
        Scheduler { cfg, clock, client: None }
    }

    pub fn with_client(mut self, client: ClientConfig) -> Self {
        self.client = Some(client);
        self
    }

    fn slot_on(&self, date: NaiveDate) -> DateTime<Utc> {
        let local = date.and_time(self.cfg.schedule);
        match self.cfg.tz.from_local_datetime(&local).earliest() {
            Some(t) => t.with_timezone(&Utc),
            // inside a DST gap: the first instant after it
            None => self
                .cfg
                .tz
                .from_local_datetime(&(local + chrono::Duration::hours(1)))
                .earliest()
                .map_or_else(|| local.and_utc(), |t| t.with_timezone(&Utc)),
        }
    }

    /// Latest slot at or before `t`.
    pub fn slot_at(&self, t: DateTime<Utc>) -> DateTime<Utc> {
        let date = t.with_timezone(&self.cfg.tz).date_naive();
        let today = self.slot_on(date);
        if today <= t {
            today
        } else {
            self.slot_on(date - Days::new(1))
        }
    }

    /// First slot strictly after `t`.
    pub fn next_slot(&self, t: DateTime<Utc>) -> DateTime<Utc> {
        let date = t.with_timezone(&self.cfg.tz).date_naive();
        (0..3)
            .map(|d| self.slot_on(date + Days::new(d)))
            .find(|s| *s > t)
            .expect("a slot within three days")
    }

    /// Newest slot that a run or a lock skip already accounts for.
    pub fn handled_slot(&self) -> Result<Option<DateTime<Utc>>, PipelineError> {
        self.newest_slot(true)
    }

    fn newest_slot(&self, with_skips: bool) -> Result<Option<DateTime<Utc>>, PipelineError> {
        Ok(Ledger::new(&self.cfg.state_dir)
            .read()?
            .iter()
            .filter(|r| r.kind == RecordKind::Run || (with_skips && r.kind == RecordKind::Skipped))
            .filter_map(|r| r.trigger.slot())
            .max())
    }

    /// Decides and acts for the current instant. `startup` marks the first
    /// check after the process came up, the only one that may catch up.
    pub fn tick(&self, startup: bool) -> Result<Option<RunRecord>, PipelineError> {
        let now = self.clock.now();
        let slot = self.slot_at(now);
        let due = |handled: Option<DateTime<Utc>>| match handled {
            Some(h) => slot > h,
            None => !startup || now - slot < ON_TIME,
        };
        if !due(self.handled_slot()?) {
            return Ok(None);
        }
        let on_time = now - slot < ON_TIME;
        if !on_time && !startup {
            log::warn!("woke up late for slot {slot}");
        }
        let trigger = if on_time {
            Trigger::Scheduled { slot }
        } else {
            Trigger::CatchUp { slot }
        };

        std::fs::create_dir_all(&self.cfg.state_dir).map_err(|e| PipelineError::io(&self.cfg.state_dir, e))?;
        let lock_path = self.cfg.state_dir.join("run.lock");
        let Some(_lock) = FileLock::try_acquire(&lock_path)? else {
            log::warn!("slot {slot}: another run holds the lock, skipping");
            return self.record_skip(trigger, now).map(Some);
        };
        // a skip written by a competitor that lost the lock to us does not count
        if !due(self.newest_slot(false)?) {
            return Ok(None);
        }
        let opts = RunOptions {
            now,
            trigger,
            faults: FaultPlan::none(),
            client: self.client.clone(),
        };
        run_locked(self.cfg, &opts).map(Some)
    }

    fn record_skip(&self, trigger: Trigger, now: DateTime<Utc>) -> Result<RunRecord, PipelineError> {
        let floor = numeric_dirs(&artifacts_root(&self.cfg.state_dir)).last().copied().unwrap_or(0);
        Ledger::new(&self.cfg.state_dir).append_with(floor, |id, previous, _| {
            Ok(RunRecord {
                run_id: id,
                kind: RecordKind::Skipped,
                trigger,
                started_at: now,
                finished_at: now,
                status: RunStatus::Skipped,
                sources: Vec::new(),
                digests: None,
                previous,
                restored: None,
                note: Some("run lock held by another process".into()),
            })
        })
    }

    /// Loops until the clock stops, returning every record it produced.
    ///
    /// Without any scheduled run in the ledger the first run waits for the
    /// next slot; otherwise a missed slot is caught up once at startup.
    pub fn run(&self) -> Result<Vec<RunRecord>, PipelineError> {
        let mut out = Vec::new();
        let mut startup = true;
        loop {
            match self.tick(startup) {
                Ok(Some(rec)) => {
                    log::info!("run {} finished: {:?}", rec.run_id, rec.status);
                    out.push(rec);
                }
                Ok(None) => {}
                Err(e @ PipelineError::Crashed { .. }) => return Err(e),
                Err(e) => log::error!("scheduled run: {e}"),
            }
            startup = false;
            let next = self.next_slot(self.clock.now());
            if !self.clock.sleep_until(next) {
                return Ok(out);
            }
        }
    }
}
