use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wastemap_cli::{commands, CliError, PipelineConfig};

/// City-scale waste mapping: hydrology, hex aggregation, hotspots and
/// drainage clogging risk.
#[derive(Parser)]
#[command(name = "wastemap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (flat key = value file).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set n_perm=199`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, shorthand for `--set output_dir=DIR`.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Flow directions, accumulation and Strahler-ordered streams.
    Hydro,
    /// Hexagonal UAV and street-view waste indices.
    Aggregate,
    /// Local Moran's I hotspot clusters.
    Lisa,
    /// Per-segment clogging risk and riverbed concentration report.
    Risk,
    /// hydro, aggregate, lisa and risk in one pass.
    Run,
    /// Planar patches from equirectangular panoramas.
    Pano,
    /// Spatial k-means train/val/test split of image locations.
    Split,
}

fn run(cli: &Cli) -> Result<commands::Outcome, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv, Path::new("."))?;
    }
    if let Some(o) = &cli.output {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::internal)?;
    }
    match cli.command {
        Command::Hydro => commands::cmd_hydro(&cfg),
        Command::Aggregate => commands::cmd_aggregate(&cfg),
        Command::Lisa => commands::cmd_lisa(&cfg),
        Command::Risk => commands::cmd_risk(&cfg),
        Command::Run => commands::cmd_run(&cfg),
        Command::Pano => commands::cmd_pano(&cfg),
        Command::Split => commands::cmd_split(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            for m in &out.messages {
                eprintln!("{m}");
            }
            for p in &out.written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
