mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use commands::Invocation;
use config::load_config;
use nnpot_core::decomp::Scheme;

#[derive(Parser)]
#[command(name = "nnpot", version, about = "Neural-network potential MD with spatial decomposition")]
struct Cli {
    /// TOML config file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// masked-reduction or wide-halo.
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    /// Comma-separated rank counts, e.g. 1,2,4.
    #[arg(long, global = true, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a DP model to LJ-labelled frames.
    Train,
    /// Molecular dynamics with the classical, single-domain or decomposed potential.
    Run,
    /// Compare decomposed and single-domain evaluation on random systems.
    ValidateDd,
    /// Time decomposed evaluation across rank counts.
    Sweep,
    /// Fit the throughput model to a sweep CSV.
    FitScaling {
        input: Option<PathBuf>,
        /// Reference rank count for efficiencies.
        #[arg(long)]
        reference: Option<u32>,
    },
    /// Per-axis radii of gyration over a trajectory.
    Gyrate {
        trajectory: Option<PathBuf>,
        /// Group by species, e.g. 0,2; defaults to gyrate.group.
        #[arg(long, value_delimiter = ',')]
        species: Option<Vec<usize>>,
        /// Stability window in frames; 0 disables the check.
        #[arg(long)]
        window: Option<usize>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cfg.workers == 0 {
        cfg.workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(s) = cli.scheme {
        cfg.sweep.scheme = s;
        cfg.validate_dd.schemes = vec![s];
        if let nnpot_core::engine::Potential::DpDd { scheme, .. } = &mut cfg.run.potential {
            *scheme = s;
        }
    }
    if let Some(r) = cli.ranks {
        if r.is_empty() || r.contains(&0) {
            bail!("--ranks needs positive rank counts");
        }
        cfg.sweep.ranks = r.clone();
        cfg.validate_dd.ranks = r.clone();
        if let nnpot_core::engine::Potential::DpDd { n_ranks, .. } = &mut cfg.run.potential {
            *n_ranks = r[0];
        }
    }
    let name = match &cli.command {
        Command::Train => "train",
        Command::Run => "run",
        Command::ValidateDd => "validate-dd",
        Command::Sweep => "sweep",
        Command::FitScaling { reference, .. } => {
            if let Some(r) = reference {
                cfg.fit_scaling.reference = *r;
            }
            "fit-scaling"
        }
        Command::Gyrate { window, species, .. } => {
            if let Some(w) = window {
                cfg.gyrate.window = *w;
            }
            if let Some(sp) = species {
                cfg.gyrate.group = config::GroupSpec::Species(sp.clone());
            }
            "gyrate"
        }
    };
    let inv = Invocation {
        command: name,
        config_path: cli.config.clone(),
        cfg,
    };
    match &cli.command {
        Command::Train => commands::cmd_train(&inv),
        Command::Run => commands::cmd_run(&inv),
        Command::ValidateDd => commands::cmd_validate_dd(&inv),
        Command::Sweep => commands::cmd_sweep(&inv),
        Command::FitScaling { input, .. } => commands::cmd_fit_scaling(&inv, input.as_deref()),
        Command::Gyrate { trajectory, .. } => commands::cmd_gyrate(&inv, trajectory.as_deref()),
    }
}
