mod common;

use std::collections::BTreeMap;
use std::fs;

use chrono::Duration;
use common::demo::{self, export_bytes, exports, Demo};
use pulsemon_core::ingest::FixtureServer;
use pulsemon_core::pipeline::{
    available_runs, digest_dir, published_run, rollback, run_daily, FaultPlan, FileLock, Ledger, PipelineError,
    RecordKind, RunOptions, RunStatus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Adds news item `i-2009` (published on the 20th) with one post.
fn add_late_item(server: &FixtureServer) {
    server.update(|c| {
        let doc = c.tickers.get_mut("1005").unwrap();
        let mut v: Value = serde_json::from_str(doc).unwrap();
        v["data"]["ticker"]["items"].as_array_mut().unwrap().push(json!({
            "id": "i-2009",
            "published_at": "2020-03-20T14:00:00Z",
        }));
        *doc = v.to_string();
        c.posts.insert(
            "i-2009".into(),
            vec![json!({
                "id": "p-i-2009-01",
                "created_at": "2020-03-20T14:00:30Z",
                "author": "neu",
                "text": "Wir haben Angst, aber auch Hoffnung.",
            })],
        );
    });
}

const LATE_TWEET: &str = "microblog\tmb-020\t2020-03-19T12:00:00Z\ta9\t\tWir helfen, wo wir können.";

fn ledger(d: &Demo) -> Vec<pulsemon_core::pipeline::RunRecord> {
    Ledger::new(&d.cfg.state_dir).read().unwrap()
}

#[test]
fn first_run_publishes_every_export() {
    let d = Demo::start();
    let rec = run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    assert_eq!(rec.status, RunStatus::Success);
    assert_eq!(rec.run_id, 1);
    assert_eq!(published_run(&d.cfg), Some(1));

    let files: Vec<String> = exports(&d.path("public")).into_keys().collect();
    let mut want = vec!["series/liveticker.json".to_string(), "series/microblog.json".into(), "series/studentchat.json".into()];
    for p in ["liveticker", "microblog"] {
        for c in ["anger", "anxiety", "posemo", "prosocial", "sadness", "social"] {
            want.push(format!("clouds/{p}/{c}.json"));
        }
    }
    want.push("stats.json".into());
    want.sort();
    assert_eq!(files, want);

    // the published copy carries exactly the recorded digests plus the history
    assert_eq!(digest_dir(&d.path("public")).unwrap(), rec.digests.clone().unwrap());
    let runs: Vec<Value> = serde_json::from_slice(&fs::read(d.path("public/runs.json")).unwrap()).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(fs::read_link(d.path("out")).unwrap().file_name().unwrap(), "1");

    let ticker = &rec.sources[0];
    assert_eq!((ticker.tickers_seen, ticker.items_fetched, ticker.posts_added), (4, 11, 52));
    assert_eq!(rec.sources[1].rejects, 1);
    assert!(d.path("state/rejects/microblog.tsv").exists());
}

#[test]
fn rerun_over_unchanged_inputs_is_byte_identical() {
    let d = Demo::start();
    run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    let first = export_bytes(&d.path("public"));
    let rec = run_daily(&d.cfg, &d.opts(demo::now() + Duration::hours(1))).unwrap();
    assert_eq!(rec.status, RunStatus::Success);
    assert_eq!(rec.previous, Some(1));
    assert!(rec.sources.iter().all(|s| s.posts_added == 0));
    assert_eq!(export_bytes(&d.path("public")), first);
    assert_eq!(ledger(&d).len(), 2);
}

fn changed_dates(before: &Value, after: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let cats = |v: &Value| v["categories"].as_array().unwrap().clone();
    let (b, a) = (cats(before), cats(after));
    assert_eq!(b.len(), a.len());
    for (sb, sa) in b.iter().zip(&a) {
        let points = |s: &Value| -> BTreeMap<String, Value> {
            s["points"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| (p["date"].as_str().unwrap().to_string(), p.clone()))
                .collect()
        };
        let (pb, pa) = (points(sb), points(sa));
        for (date, p) in &pa {
            if pb.get(date) != Some(p) {
                out.push(date.clone());
            }
        }
        assert!(pb.keys().all(|k| pa.contains_key(k)));
    }
    out.sort();
    out.dedup();
    out
}

#[test]
fn one_new_post_changes_only_its_day() {
    let d = Demo::start();
    run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    let before = exports(&d.path("public"));

    d.append_microblog(LATE_TWEET);
    run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    let after = exports(&d.path("public"));
    assert_eq!(changed_dates(&before["series/microblog.json"], &after["series/microblog.json"]), ["2020-03-19"]);
    assert_eq!(before["series/liveticker.json"], after["series/liveticker.json"]);
    assert_eq!(before["series/studentchat.json"], after["series/studentchat.json"]);

    add_late_item(&d.server);
    run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    let third = exports(&d.path("public"));
    assert_eq!(changed_dates(&after["series/liveticker.json"], &third["series/liveticker.json"]), ["2020-03-20"]);
    assert_eq!(after["series/microblog.json"], third["series/microblog.json"]);
}

#[test]
fn incremental_runs_equal_a_single_full_run() {
    let full = Demo::start();
    add_late_item(&full.server);
    full.append_microblog(LATE_TWEET);
    run_daily(&full.cfg, &full.opts(demo::now())).unwrap();

    // the same inputs arriving over three runs
    let mut corpus = demo::corpus();
    corpus.tickers.remove("1005");
    let inc = Demo::with_corpus(corpus);
    run_daily(&inc.cfg, &inc.opts(demo::now())).unwrap();
    inc.server.update(|c| *c = demo::corpus());
    inc.append_microblog(LATE_TWEET);
    run_daily(&inc.cfg, &inc.opts(demo::now())).unwrap();
    add_late_item(&inc.server);
    let rec = run_daily(&inc.cfg, &inc.opts(demo::now())).unwrap();
    assert_eq!(rec.sources[0].items_fetched, 1);

    assert_eq!(export_bytes(&inc.path("public")), export_bytes(&full.path("public")));
}

fn with_faults(d: &Demo, faults: FaultPlan) -> RunOptions {
    RunOptions {
        faults,
        ..d.opts(demo::now())
    }
}

/// The published tree is always a complete set some committed record vouches for.
fn assert_publication_consistent(d: &Demo) {
    let id = published_run(&d.cfg).expect("something is published");
    let rec = ledger(d).into_iter().find(|r| r.run_id == id).expect("published run is committed");
    assert_eq!(digest_dir(&d.path("public")).unwrap(), rec.digests.unwrap(), "publication of run {id}");
}

#[test]
fn crash_at_random_points_leaves_publication_intact() {
    // reference: the run after the change, uninterrupted
    let reference = Demo::start();
    run_daily(&reference.cfg, &reference.opts(demo::now())).unwrap();
    add_late_item(&reference.server);
    reference.append_microblog(LATE_TWEET);
    let plan = FaultPlan::none();
    run_daily(&reference.cfg, &with_faults(&reference, plan.clone())).unwrap();
    let checkpoints = plan.passed();
    assert!(checkpoints > 10, "{checkpoints} checkpoints");
    let want = export_bytes(&reference.path("public"));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut points: Vec<usize> = (0..10).map(|_| rng.gen_range(1..=checkpoints)).collect();
    points.sort();
    for k in points {
        let d = Demo::start();
        run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
        let published_before = export_bytes(&d.path("public"));
        add_late_item(&d.server);
        d.append_microblog(LATE_TWEET);

        let err = run_daily(&d.cfg, &with_faults(&d, FaultPlan::crash_at(k))).unwrap_err();
        assert!(matches!(err, PipelineError::Crashed { n, .. } if n == k), "{err}");
        assert_publication_consistent(&d);
        if published_run(&d.cfg) == Some(1) {
            assert_eq!(export_bytes(&d.path("public")), published_before, "crash at {k}");
        }

        let rec = run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
        assert_eq!(rec.status, RunStatus::Success, "recovery after crash at {k}");
        assert_publication_consistent(&d);
        assert_eq!(export_bytes(&d.path("public")), want, "recovery after crash at {k}");
        let staging: Vec<_> = fs::read_dir(d.path("state/artifacts"))
            .unwrap()
            .flatten()
            .filter(|e| e.file_name().to_string_lossy().starts_with("staging"))
            .collect();
        assert!(staging.is_empty(), "leftover staging after crash at {k}");
    }
}

#[test]
fn rollback_restores_an_earlier_publication() {
    let d = Demo::start();
    let first = run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    let published_first = export_bytes(&d.path("public"));
    d.append_microblog(LATE_TWEET);
    run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    assert_ne!(export_bytes(&d.path("public")), published_first);

    let rec = rollback(&d.cfg, 1, demo::now()).unwrap();
    assert_eq!(rec.kind, RecordKind::Rollback);
    assert_eq!(rec.restored, Some(1));
    assert_eq!(rec.digests, first.digests);
    assert_eq!(published_run(&d.cfg), Some(rec.run_id));
    assert_eq!(export_bytes(&d.path("public")), published_first);
    // the output link keeps the newest computed set
    assert_eq!(fs::read_link(d.path("out")).unwrap().file_name().unwrap(), "2");

    let runs: Vec<Value> = serde_json::from_slice(&fs::read(d.path("public/runs.json")).unwrap()).unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(runs[2]["kind"], "rollback");

    // the next run computes from the full store again
    let next = run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    assert_eq!(next.run_id, 4);
    assert_eq!(export_bytes(&d.path("public")), export_bytes(&d.path("state/artifacts/2")));
}

#[test]
fn rollback_to_unknown_run_names_the_available_ones() {
    let d = Demo::start();
    run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    let before = export_bytes(&d.path("public"));
    match rollback(&d.cfg, 99, demo::now()) {
        Err(PipelineError::UnknownRun { run, available }) => {
            assert_eq!(run, 99);
            assert_eq!(available, vec![1, 2]);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(available_runs(&d.cfg).unwrap(), vec![1, 2]);
    assert_eq!(export_bytes(&d.path("public")), before);
    assert_eq!(ledger(&d).len(), 2);
}

#[test]
fn pruning_keeps_the_newest_sets() {
    let mut d = Demo::start();
    d.reconfigure("retain_runs = 2");
    for _ in 0..4 {
        run_daily(&d.cfg, &d.opts(demo::now())).unwrap();
    }
    assert_eq!(available_runs(&d.cfg).unwrap(), vec![3, 4]);
    assert!(matches!(rollback(&d.cfg, 1, demo::now()), Err(PipelineError::UnknownRun { .. })));
}

#[test]
fn held_lock_refuses_a_second_run() {
    let d = Demo::start();
    fs::create_dir_all(d.path("state")).unwrap();
    let _held = FileLock::try_acquire(&d.path("state/run.lock")).unwrap().unwrap();
    assert!(matches!(run_daily(&d.cfg, &d.opts(demo::now())), Err(PipelineError::LockHeld(_))));
    assert!(matches!(rollback(&d.cfg, 1, demo::now()), Err(PipelineError::LockHeld(_))));
    assert!(ledger(&d).is_empty());
}

#[test]
fn unreachable_source_gives_a_partial_run() {
    let d = Demo::start();
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let text = demo::config_text(&format!("http://{dead}/"), "");
    let cfg = pulsemon_core::pipeline::PipelineConfig::parse(&text, d.dir.path()).unwrap();
    let opts = RunOptions {
        client: Some(pulsemon_core::ingest::ClientConfig {
            attempts: 1,
            ..pulsemon_core::ingest::ClientConfig::for_fixtures()
        }),
        ..RunOptions::manual(demo::now())
    };
    let rec = run_daily(&cfg, &opts).unwrap();
    assert_eq!(rec.status, RunStatus::Partial);
    assert_eq!(rec.status.exit_code(), 1);
    assert!(rec.sources[0].failed);
    assert!(!rec.sources[1].failed);
    assert_eq!(published_run(&cfg), Some(1));
    assert!(d.path("public/series/microblog.json").exists());
}

#[test]
fn broken_lexicon_records_a_failed_run() {
    let d = Demo::start();
    let bad = d.path("badlex");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("anxiety.txt"), "angst*\n*\n").unwrap();
    let text = demo::config_text(d.server.base_url().as_ref(), "").replace(
        &format!("paths = [\"{}\"]", demo::repo_root().join("lexica").display()),
        &format!("paths = [\"{}\"]", bad.display()),
    );
    let cfg = pulsemon_core::pipeline::PipelineConfig::parse(&text, d.dir.path()).unwrap();
    let rec = run_daily(&cfg, &d.opts(demo::now())).unwrap();
    assert_eq!(rec.status, RunStatus::Failed);
    assert_eq!(rec.status.exit_code(), 2);
    assert!(rec.digests.is_none());
    assert!(rec.note.is_some());
    assert_eq!(published_run(&cfg), None);
}
