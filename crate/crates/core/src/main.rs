use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kinlayer::config::{apply_env_overrides, Config};
use kinlayer::scenario::{run_scenario, Command, RunOptions, RunSummary};
use kinlayer::{Error, Result};

/// Boundary-layer solver for the Boltzmann equation with supersonic inflow.
#[derive(Debug, Parser)]
#[command(name = "kinlayer", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON scenario file; the reference configuration when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// artifact directory
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// RNG seed; overrides `seed` in the config (whose default is 42)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// operator cache directory (default: <out-dir>/operators)
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// reassemble operators even when a cached dump matches
    #[arg(long, global = true)]
    rebuild_operator: bool,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// One-dimensional stationary boundary layer
    Slab,
    /// Time-global solutions across a sweep of data sizes
    Global,
    /// Time-periodic orbit for periodic boundary data
    Periodic,
    /// Orbits at halved periods for time-independent data
    Stationary,
    /// Decay of perturbations of the target orbit
    Stability,
    /// Every verification experiment plus the constants report
    VerifyAll,
    /// Linear evolution of the configured datum
    Evolve(EvolveArgs),
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// snapshot cadence in steps (0 disables)
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// also sum the Duhamel series to this order
    #[arg(long)]
    series_order: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => {
            let mut value = serde_json::to_value(Config::reference())?;
            apply_env_overrides(&mut value, std::env::vars())?;
            Config::from_value(value)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Cmd::Evolve(a) = &cli.command {
        if let Some(t) = a.t_final {
            cfg.evolve.t_final = t;
        }
        if a.dt.is_some() {
            cfg.evolve.dt = a.dt;
        }
        if let Some(n) = a.snapshot_every {
            cfg.evolve.snapshot_every = n;
        }
        if a.series_order.is_some() {
            cfg.evolve.series_order = a.series_order;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<RunSummary> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    let command = match cli.command {
        Cmd::Slab => Command::Slab,
        Cmd::Global => Command::Global,
        Cmd::Periodic => Command::Periodic,
        Cmd::Stationary => Command::Stationary,
        Cmd::Stability => Command::Stability,
        Cmd::VerifyAll => Command::VerifyAll,
        Cmd::Evolve(_) => Command::Evolve,
    };
    let opts = RunOptions {
        out_dir: cli.out_dir.clone(),
        cache_dir: cli.cache_dir.clone(),
        rebuild_operator: cli.rebuild_operator,
    };
    run_scenario(command, &cfg, &opts)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            for (name, ok) in &summary.checks {
                println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
            }
            println!("config {}", summary.config_hash);
            println!("manifest {}", summary.manifest_hash);
            if summary.passed() {
                ExitCode::SUCCESS
            } else {
                let failed: Vec<&str> =
                    summary.checks.iter().filter(|(_, ok)| !**ok).map(|(n, _)| n.as_str()).collect();
                eprintln!("error: checks failed: {}", failed.join(", "));
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
