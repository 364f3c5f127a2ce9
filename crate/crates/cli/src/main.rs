use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::LevelFilter;

use sce_cli::{execute, write_outputs, ExperimentConfig, FailurePolicy};

#[derive(Parser)]
#[command(name = "sce", version, about = "Compare exact and Kohn-Sham SCE energies on lattice models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true, default_value = "warn")]
    log_level: LevelFilter,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method on every grid point; any method error fails the run.
    Run { config: PathBuf },
    /// Like `run`, but failed points are recorded and the sweep continues.
    Sweep { config: PathBuf },
    /// Check a config and print the grid it expands to.
    Validate { config: PathBuf },
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn experiment(path: &Path, cli: &Cli, policy: FailurePolicy) -> Result<bool> {
    let cfg = load(path, cli)?;
    let outcome = execute(&cfg, cli.jobs)?;
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    write_outputs(&outcome, &dir)?;
    println!("wrote {} rows to {}", outcome.rows.len(), dir.join("results.csv").display());
    if outcome.failures() > 0 {
        eprintln!("{} method run(s) failed; see the error column", outcome.failures());
        return Ok(policy == FailurePolicy::Continue);
    }
    Ok(true)
}

fn validate(path: &Path, cli: &Cli) -> Result<bool> {
    let cfg = load(path, cli)?;
    let methods: Vec<String> = cfg.methods.iter().map(|m| m.to_string()).collect();
    println!("{}: {} grid point(s), methods {}", path.display(), cfg.grid_points().len(), methods.join(", "));
    for p in cfg.grid_points() {
        match p.v {
            Some(v) => println!("  L={} N={} U={} V={v}", p.sites, p.n, p.u),
            None => println!("  L={} N={} U={}", p.sites, p.n, p.u),
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    let result = match &cli.command {
        Command::Run { config } => experiment(config, &cli, FailurePolicy::Strict),
        Command::Sweep { config } => experiment(config, &cli, FailurePolicy::Continue),
        Command::Validate { config } => validate(config, &cli),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
