use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use vrgcs_core::sim::parse_script;
use vrgcs_core::telemetry::{import_csv, latency_stats, stats_from_ns, LatencyRow};
use vrgcs_core::{evaluate_mission, MissionCriteria, ServerConfig};
use vrgcs_server::{load_world, run_server, start_server, ServerOptions};

#[derive(Parser)]
#[command(name = "vr-gcs", version, about = "VR multicopter ground station")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation and WebSocket server.
    Serve(ServeArgs),
    /// Summarise a latency CSV written by `serve --latency-csv`.
    Analyze {
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config file. Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// World file, overriding the config.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    /// Command script (`t takeoff`, `t land`, `t cmd_vel vx vy vz yaw_rate`).
    /// The server exits after the scripted flight and prints a mission
    /// report as JSON.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Run the script as fast as possible instead of in real time.
    #[arg(long, requires = "script")]
    fast: bool,
    /// Simulated seconds allowed for the script.
    #[arg(long, default_value_t = 600.0, requires = "script")]
    max_time: f64,
    /// Write latency probes here on exit.
    #[arg(long)]
    latency_csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("VR_GCS_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(args) => serve(args),
        Command::Analyze { csv } => analyze(&csv).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &ServeArgs) -> Result<ServerConfig> {
    let mut config = match &args.config {
        Some(path) => ServerConfig::load(path)?,
        None => ServerConfig::default(),
    };
    if let Some(world) = &args.world {
        config.world = Some(world.clone());
    }
    if let Some(port) = args.port {
        config.port = port;
    }
    config.validate()?;
    Ok(config)
}

/// Returns whether the run succeeded.
fn serve(args: ServeArgs) -> Result<bool> {
    let config = load_config(&args)?;
    let runtime = tokio::runtime::Runtime::new()?;
    let Some(script_path) = &args.script else {
        let log = runtime.block_on(run_server(config))?;
        if let Some(path) = &args.latency_csv {
            log.export_csv(path)?;
            info!(path = %path.display(), probes = log.len(), "latency log written");
        }
        return Ok(true);
    };

    let text =
        std::fs::read_to_string(script_path).with_context(|| format!("reading {}", script_path.display()))?;
    let script = parse_script(&text).with_context(|| format!("parsing {}", script_path.display()))?;
    let world = load_world(&config)?;

    runtime.block_on(async {
        let options = ServerOptions {
            script: Some(script),
            fast: args.fast,
            script_max_time: Some(args.max_time),
        };
        let mut handle = start_server(config, world.clone(), options).await?;
        info!(addr = %handle.local_addr(), "running script");
        let Some(outcome) = handle.script_outcome().await else {
            bail!("simulation stopped before the script finished");
        };
        let log = handle.shutdown().await;

        for (event, err) in &outcome.rejected {
            warn!("script command at {} s rejected: {err}", event.time);
        }
        let mut report = evaluate_mission(&outcome.trajectory, &world, &MissionCriteria::default())?;
        if !log.is_empty() {
            report = report.with_latency(&latency_stats(&log)?);
        }
        if let Some(path) = &args.latency_csv {
            log.export_csv(path)?;
        }
        if outcome.timed_out {
            warn!("script did not finish within {} s", args.max_time);
        }
        println!("{}", serde_json::to_string_pretty(&report)?);
        Ok(report.passed && !outcome.timed_out)
    })
}

fn analyze(path: &PathBuf) -> Result<()> {
    let rows = import_csv(path)?;
    let summary = |label: &str, rows: &[&LatencyRow]| -> Result<()> {
        if rows.is_empty() {
            println!("{label:<12} no probes");
            return Ok(());
        }
        let ns: Vec<u64> = rows.iter().map(|r| r.one_way_ns).collect();
        let s = stats_from_ns(&ns)?;
        println!(
            "{label:<12} n={:<6} mean={:.3} ms  median={:.3} ms  max={:.3} ms",
            s.count, s.mean_ms, s.median_ms, s.max_ms
        );
        Ok(())
    };
    let all: Vec<&LatencyRow> = rows.iter().collect();
    if all.is_empty() {
        bail!("{} holds no probes", path.display());
    }
    summary("all", &all)?;
    let (mapping, idle): (Vec<&LatencyRow>, Vec<&LatencyRow>) = all.iter().partition(|r| r.mapping_enabled);
    summary("mapping", &mapping)?;
    summary("not mapping", &idle)?;
    Ok(())
}
