use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use nhqt_cli::{bundled, run, Experiment};

#[derive(Parser)]
#[command(name = "simulate", version, about = "Noisy non-Hermitian qubit trajectories and photonic compilation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunFlags {
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trajectory ensembles [default: available parallelism].
    #[arg(long, env = "SIMULATE_WORKERS")]
    workers: Option<usize>,
    /// Output path prefix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Check a config and print every resolved parameter.
    Validate { config: PathBuf },
    /// Run a bundled figure recipe (fig1 … fig11).
    Recipe {
        name: Option<String>,
        #[command(flatten)]
        flags: RunFlags,
        /// Print the recipe config instead of running it.
        #[arg(long)]
        show: bool,
        /// List bundled recipes.
        #[arg(long)]
        list: bool,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, flags } => {
            let exp = Experiment::from_path(&config)?;
            execute(exp, flags)
        }
        Command::Validate { config } => {
            let exp = Experiment::from_path(&config)?;
            println!("{exp}");
            println!("ok: {}", config.display());
            Ok(())
        }
        Command::Recipe { name, flags, show, list } => {
            if list {
                println!("{}", bundled::names().join("\n"));
                return Ok(());
            }
            let name = name.ok_or_else(|| anyhow!("name a recipe ({})", bundled::names().join(", ")))?;
            let text = bundled::lookup(&name)
                .ok_or_else(|| anyhow!("unknown recipe {name}; available: {}", bundled::names().join(", ")))?;
            if show {
                print!("{text}");
                return Ok(());
            }
            let exp = Experiment::from_str(text, PathBuf::from(&name)).with_context(|| format!("bundled recipe {name}"))?;
            execute(exp, flags)
        }
    }
}

fn execute(mut exp: Experiment, flags: RunFlags) -> Result<()> {
    if let Some(seed) = flags.seed {
        exp.run.master_seed = seed;
    }
    let prefix = flags.out.unwrap_or_else(|| exp.output.clone());
    let workers = match flags.workers {
        Some(0) => return Err(anyhow!("--workers must be at least 1")),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let start = Instant::now();
    let report = pool.install(|| run(&exp, &prefix, |line| eprintln!("  {line}")))?;
    for note in &report.notes {
        eprintln!("  {note}");
    }
    println!(
        "{} n_traj={} wall={:.2}s outputs={}",
        exp.recipe.name(),
        report.n_traj,
        start.elapsed().as_secs_f64(),
        join_paths(report.outputs.iter().map(|(p, _)| p.as_path()))
    );
    Ok(())
}

fn join_paths<'a>(paths: impl Iterator<Item = &'a Path>) -> String {
    paths.map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}
