use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use copper_api::adapter::synthetic_router;
use copper_api::ServiceConfig;
use copper_core::harness::{self, Report, ScenarioConfig};
use copper_core::testbed::{AppKind, SyntheticApp};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "copper", version, about = "SLA-aware interactive parameter-sweep optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "COPPER_PORT", default_value_t = 8080)]
        port: u16,
        /// Event logs live here; omit for an in-memory service.
        #[arg(long, env = "COPPER_DATA_DIR")]
        data_dir: Option<PathBuf>,
        /// Push queued jobs to this adapter's /run.
        #[arg(long, env = "COPPER_ADAPTER_URL")]
        adapter_url: Option<String>,
        /// This service's base URL as the adapter sees it.
        #[arg(long, env = "COPPER_PUBLIC_URL")]
        public_url: Option<String>,
        /// Events a stream subscriber may lag before it is disconnected.
        #[arg(long, default_value_t = ServiceConfig::DEFAULT_STREAM_BUFFER)]
        stream_buffer: usize,
    },
    /// Serve a synthetic application over the adapter protocol.
    Adapter {
        #[arg(long, value_parser = parse_kind)]
        kind: AppKind,
        /// Table seed; the shipped default when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 9090)]
        port: u16,
        /// Artificial delay before each result callback.
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
    },
    /// Run a batch scenario with simulated analysts and write its report.
    RunExperiment {
        #[arg(long)]
        config: PathBuf,
        /// Reports go to `<out>/<scenario name>/`.
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Recompute tables and summary from a scenario's `records.csv`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<AppKind, String> {
    AppKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| {
        let names: Vec<&str> = AppKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown application {s:?}; expected one of {}", names.join(", "))
    })
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { port, data_dir, adapter_url, public_url, stream_buffer } => {
            let config = ServiceConfig { port, data_dir, adapter_url, public_url, stream_buffer };
            runtime()?.block_on(copper_api::serve(config, shutdown_signal()))?;
        }
        Command::Adapter { kind, seed, port, latency_ms } => {
            let app = match seed {
                Some(seed) => SyntheticApp::new(kind, seed),
                None => SyntheticApp::default_for(kind),
            };
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
                tracing::info!(port = listener.local_addr()?.port(), app = %kind, "adapter listening");
                let router = synthetic_router(app, Duration::from_millis(latency_ms));
                axum::serve(listener, router).with_graceful_shutdown(shutdown_signal()).await?;
                anyhow::Ok(())
            })?;
        }
        Command::RunExperiment { config, out } => run_experiment(&config, &out)?,
        Command::Report { input } => {
            let report = rebuild_report(&input)?;
            print_cells(&report);
        }
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

const CONFIG_FILE: &str = "config.json";

fn run_experiment(config_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", config_path.display()))?;
    config.validate()?;
    let dir = out.join(&config.name);
    let cells = config.cells();
    tracing::info!(scenario = %config.name, cells = cells.len(), runs = config.runs_per_cell, "running");
    let app = config.app();
    let mut records = Vec::new();
    for (i, key) in cells.iter().enumerate() {
        records.extend(harness::run_cell(&config, &app, i, key)?);
        tracing::info!(cell = %key.id(), done = i + 1, of = cells.len(), "cell finished");
    }
    let report = harness::report(&records, config.ci_level, config.resamples, config.seed)?;
    harness::write_report(&dir, &records, &report)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&config)? + "\n")?;
    print_cells(&report);
    println!("report written to {}", dir.display());
    Ok(())
}

fn rebuild_report(dir: &Path) -> Result<Report> {
    let records_path = dir.join("records.csv");
    if !records_path.exists() {
        bail!("{} has no records.csv", dir.display());
    }
    let records = harness::read_records(&records_path)?;
    // Interval settings come from the stored scenario when there is one.
    let (level, resamples, seed) = match fs::read_to_string(dir.join(CONFIG_FILE)) {
        Ok(text) => {
            let c: ScenarioConfig = serde_json::from_str(&text).context("parsing stored config.json")?;
            (c.ci_level, c.resamples, c.seed)
        }
        Err(_) => (0.95, 1000, 0),
    };
    let report = harness::report(&records, level, resamples, seed)?;
    harness::write_report(dir, &records, &report)?;
    Ok(report)
}

fn print_cells(report: &Report) {
    println!("{:<44} {:>18} {:>12} {:>12} {:>12} {:>6}", "cell", "metric", "mean", "lo", "hi", "n");
    for c in &report.cells {
        println!("{:<44} {:>18} {:>12.4} {:>12.4} {:>12.4} {:>6}", c.cell, c.metric, c.mean, c.lo, c.hi, c.n);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
}
