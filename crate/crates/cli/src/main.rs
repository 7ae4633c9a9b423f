//! `pulsemon`: command-line driver for the daily emotion monitor.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use chrono::Utc;
use clap::{Parser, Subcommand};
use pulsemon_core::ingest::{FixtureCorpus, FixtureServer};
use pulsemon_core::pipeline::{
    compute_artifacts, ingest_source, load_matchers, rollback, run_daily, serve, FaultPlan, FileLock,
    PipelineConfig, PipelineError, RunOptions, RunStatus, Scheduler, SourceReport, Store, SystemClock,
};

#[derive(Parser)]
#[command(name = "pulsemon", version, about = "Daily monitor of emotional expression in social media posts")]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true, default_value = "pulsemon.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch new data for one source into the post store.
    Ingest {
        #[arg(long)]
        source: String,
    },
    /// Write daily series and corpus statistics from the store.
    Analyze {
        /// Target directory [default: <state_dir>/analysis]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write word-cloud weights from the store.
    Wordcloud {
        /// Target directory [default: <state_dir>/analysis]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ingest every source, rebuild all exports, commit and publish.
    RunDaily,
    /// Run the daily update at the configured time until stopped.
    Schedule,
    /// Serve the published exports over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory to serve [default: the publish directory]
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Publish the exports of an earlier run again.
    Rollback {
        #[arg(long)]
        run: u64,
    },
    /// Replay a recorded liveticker corpus over HTTP.
    FixtureServer {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8631")]
        addr: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn lock(cfg: &PipelineConfig) -> Result<FileLock> {
    std::fs::create_dir_all(&cfg.state_dir)?;
    let path = cfg.state_dir.join("run.lock");
    FileLock::try_acquire(&path)?.ok_or_else(|| PipelineError::LockHeld(path).into())
}

/// Writes the exports whose path satisfies `keep`; returns how many.
fn write_subset(cfg: &PipelineConfig, out: Option<PathBuf>, keep: impl Fn(&str) -> bool) -> Result<u8> {
    let _lock = lock(cfg)?;
    let store = Store::open(&cfg.state_dir)?;
    let matchers = load_matchers(cfg)?;
    let mut artifacts = compute_artifacts(cfg, &store, &matchers, Utc::now(), &FaultPlan::none())?;
    artifacts.files.retain(|p, _| keep(p));
    let out = out.unwrap_or_else(|| cfg.state_dir.join("analysis"));
    artifacts.write_to(&out, &FaultPlan::none())?;
    for p in artifacts.files.keys() {
        println!("{}", out.join(p).display());
    }
    Ok(0)
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::FixtureServer { dir, addr } => {
            let corpus = FixtureCorpus::load(&dir).with_context(|| format!("loading {}", dir.display()))?;
            let server = FixtureServer::bind(&addr, corpus).with_context(|| format!("binding {addr}"))?;
            eprintln!("replaying {} on {}", dir.display(), server.base_url());
            server.join();
            Ok(0)
        }
        Command::Ingest { source } => {
            let cfg = load(&cli.config)?;
            let src = cfg
                .source(&source)
                .ok_or_else(|| anyhow!("no source named {source:?}"))?
                .clone();
            let _lock = lock(&cfg)?;
            let store = Store::open(&cfg.state_dir)?;
            let mut report = SourceReport {
                name: src.name.clone(),
                platform: Some(src.platform),
                ..Default::default()
            };
            let result = ingest_source(&cfg, &store, &src, &RunOptions::manual(Utc::now()), &mut report);
            if let Err(e) = &result {
                report.failed = true;
                report.errors.push(e.to_string());
            }
            print_json(&report);
            Ok(if report.failed {
                RunStatus::Failed.exit_code()
            } else if report.items_failed > 0 {
                RunStatus::Partial.exit_code()
            } else {
                0
            } as u8)
        }
        Command::Analyze { out } => {
            let cfg = load(&cli.config)?;
            write_subset(&cfg, out, |p| !p.starts_with("clouds/"))
        }
        Command::Wordcloud { out } => {
            let cfg = load(&cli.config)?;
            write_subset(&cfg, out, |p| p.starts_with("clouds/"))
        }
        Command::RunDaily => {
            let cfg = load(&cli.config)?;
            let rec = run_daily(&cfg, &RunOptions::manual(Utc::now()))?;
            print_json(&rec);
            Ok(rec.status.exit_code() as u8)
        }
        Command::Schedule => {
            let cfg = load(&cli.config)?;
            Scheduler::new(&cfg, SystemClock).run()?;
            Ok(0)
        }
        Command::Serve { addr, dir } => {
            let dir = match dir {
                Some(d) => d,
                None => load(&cli.config)?.publish_dir,
            };
            let handle = serve(&dir, &addr)?;
            eprintln!("serving {} on http://{}/", dir.display(), handle.addr());
            handle.join();
            Ok(0)
        }
        Command::Rollback { run } => {
            let cfg = load(&cli.config)?;
            let rec = rollback(&cfg, run, Utc::now())?;
            print_json(&rec);
            Ok(0)
        }
    }
}
