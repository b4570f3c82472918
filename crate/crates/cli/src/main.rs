use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gaswatch_core::config::{Config, ConfigError};
use gaswatch_core::pipeline::{self, PipelineError};
use gaswatch_core::simulate::{simulate, write_dataset, SimulationError, SimulationSpec};
use gaswatch_service::publish::{publish_analysis, publish_clusters};
use gaswatch_service::{RunRequest, RunStatus, Store, StoreError};
use log::{error, info};
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "gaswatch", version, about = "Monthly gas usage anomaly monitoring")]
struct Cli {
    /// Configuration file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for stage outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load bills, account metadata and weather; compute billing-period degree days.
    Ingest,
    /// Normalize, weather-adjust and impute monthly series.
    Preprocess,
    /// Run reference bands, boxplots and the likelihood-ratio monitor.
    Analyze,
    /// Cluster accounts into peer groups.
    Cluster,
    /// Write a synthetic dataset with ground-truth anomaly labels.
    Simulate {
        /// Simulation spec (TOML); the default three-group spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Serve the HTTP API over the flag store.
    Serve {
        /// Listen address; overrides `service.bind`.
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Preprocess => "preprocess",
            Command::Analyze => "analyze",
            Command::Cluster => "cluster",
            Command::Simulate { .. } => "simulate",
            Command::Serve { .. } => "serve",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() || cause.downcast_ref::<SimulationError>().is_some() {
            return 2;
        }
        if let Some(PipelineError::MissingInput { .. }) = cause.downcast_ref::<PipelineError>() {
            return 3;
        }
        if cause.downcast_ref::<StoreError>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn fingerprints(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for path in paths.iter().filter(|p| p.is_file()) {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        out.insert(path.display().to_string(), sha256_hex(&bytes));
    }
    Ok(out)
}

fn store_path(cfg: &Config, out: &Path) -> PathBuf {
    cfg.inputs.store.clone().unwrap_or_else(|| out.join("gaswatch.db"))
}

/// Runs `stage` as a recorded run, finishing it as failed on error.
fn recorded<T>(
    store: &Store,
    command: &str,
    cfg: &Config,
    inputs: &[&Path],
    stage: impl FnOnce(&str) -> Result<T>,
) -> Result<T> {
    let request = RunRequest {
        command: command.into(),
        config_hash: sha256_hex(cfg.to_toml().as_bytes()),
        fingerprints: fingerprints(inputs)?,
        seed: cfg.seed,
    };
    let run_id = store.record_run(&request)?;
    info!("run {run_id} started");
    match stage(&run_id) {
        Ok(v) => {
            store.finish_run(&run_id, RunStatus::Succeeded, None)?;
            println!("run {run_id} succeeded");
            Ok(v)
        }
        Err(e) => {
            if let Err(fe) = store.finish_run(&run_id, RunStatus::Failed, Some(&format!("{e:#}"))) {
                error!("could not record failure of run {run_id}: {fe}");
            }
            Err(e)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.clone();
    if let Command::Simulate { spec } = &cli.command {
        let seed = cli.seed.unwrap_or(gaswatch_core::config::DEFAULT_SEED);
        return cmd_simulate(spec.as_deref(), seed, &out);
    }
    let cfg = load_config(&cli)?;
    if let Command::Serve { bind } = &cli.command {
        return cmd_serve(&cfg, &out, *bind);
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let store = Store::open(&store_path(&cfg, &out))?;
    let command = cli.command.name();
    match cli.command {
        Command::Ingest => {
            let inputs = [cfg.inputs.bills.as_path(), cfg.inputs.accounts.as_path(), cfg.inputs.weather.as_path()];
            recorded(&store, command, &cfg, &inputs, |_| {
                let s = pipeline::ingest(&cfg, &out)?;
                println!("ingested {} bills for {} accounts with {} weather days", s.bills, s.accounts, s.weather_days);
                Ok(())
            })
        }
        Command::Preprocess => {
            let (bp, acc) = (out.join(pipeline::BILLING_PERIODS_FILE), out.join(pipeline::ACCOUNTS_FILE));
            recorded(&store, command, &cfg, &[&bp, &acc], |_| {
                let s = pipeline::preprocess(&cfg, &out)?;
                println!(
                    "preprocessed {} accounts into {} fiscal-year vectors; {} exclusions",
                    s.series.len(),
                    s.vectors.len(),
                    s.excluded.len()
                );
                Ok(())
            })
        }
        Command::Analyze => {
            let series = out.join(pipeline::SERIES_FILE);
            let acc = out.join(pipeline::ACCOUNTS_FILE);
            let clusters = out.join(pipeline::CLUSTERS_FILE);
            recorded(&store, command, &cfg, &[&series, &acc, &clusters], |run_id| {
                let analysis = pipeline::analyze(&cfg, &out, cfg.seed)?;
                let accounts = pipeline::read_accounts(&acc, "ingest")?;
                let (series, vectors) = pipeline::load_processed(&cfg, &out)?;
                let stored = publish_analysis(&store, run_id, &analysis, &accounts, &series, &vectors)?;
                println!(
                    "fiscal year {}: {} flags written to {}",
                    analysis.fiscal_year,
                    stored.len(),
                    out.join(pipeline::FLAGS_FILE).display()
                );
                for note in &analysis.notes {
                    println!("note: {note}");
                }
                Ok(())
            })
        }
        Command::Cluster => {
            let series = out.join(pipeline::SERIES_FILE);
            let acc = out.join(pipeline::ACCOUNTS_FILE);
            recorded(&store, command, &cfg, &[&series, &acc], |run_id| {
                let result = pipeline::cluster(&cfg, &out)?;
                let accounts = pipeline::read_accounts(&acc, "ingest")?;
                publish_clusters(&store, run_id, &accounts, &result)?;
                println!(
                    "clustered {} accounts into {} groups",
                    result.assignments.len(),
                    result.group_ids().len()
                );
                Ok(())
            })
        }
        Command::Simulate { .. } | Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn cmd_simulate(spec_path: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SimulationSpec>(&text)
                .map_err(|e| SimulationError::InvalidSpec(e.to_string()))
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimulationSpec::default(),
    };
    let data = simulate(&spec, seed)?;
    write_dataset(out, &data)?;
    println!(
        "wrote {} bills for {} accounts and {} injected anomalies to {}",
        data.bills.len(),
        data.accounts.len(),
        data.truth.anomalies.len(),
        out.display()
    );
    Ok(())
}

fn cmd_serve(cfg: &Config, out: &Path, bind: Option<SocketAddr>) -> Result<()> {
    let addr = match bind {
        Some(a) => a,
        None => cfg.service.bind.parse().context("service.bind")?,
    };
    let path = store_path(cfg, out);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let store = Arc::new(Store::open(&path)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
            info!("shutting down");
        };
        gaswatch_service::serve_listener(store, listener, shutdown).await?;
        Ok(())
    })
}
