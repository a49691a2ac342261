use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hyperhash::commands::{execute, replay, Manifest, Run};

/// Point-to-hyperplane hashing: datasets, collision benchmarks, LBH
/// training, Hamming indexes, queries and active learning.
#[derive(Parser)]
#[command(name = "hyperhash", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config for the command; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(Common),
    /// Validate and convert a CSV or binary dataset.
    Ingest(Common),
    /// Closed-form vs Monte-Carlo collision probabilities.
    BenchCollision(Common),
    /// ρ, p1, p2 and table layout over an r grid.
    RhoCurve(Common),
    /// Learn an LBH family.
    TrainLbh(Common),
    /// Build a Hamming index.
    BuildIndex(Common),
    /// Run hyperplane queries against an index.
    Query(Common),
    /// Margin-based active learning.
    RunAl(Common),
    /// Re-run the command recorded in a manifest (`--config`).
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    config: PathBuf,
    /// Must match the recorded seed when given.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (name, common) = match cli.command {
        Command::Replay(r) => {
            let m = Manifest::load(&r.config)
                .with_context(|| format!("reading manifest {}", r.config.display()))?;
            if let Some(s) = r.seed {
                if s != m.seed {
                    bail!("--seed {s} differs from the recorded seed {}", m.seed);
                }
            }
            let written = replay(&r.config, &r.out).context("replay")?;
            report(&written);
            return Ok(());
        }
        Command::Gen(c) => ("gen", c),
        Command::Ingest(c) => ("ingest", c),
        Command::BenchCollision(c) => ("bench-collision", c),
        Command::RhoCurve(c) => ("rho-curve", c),
        Command::TrainLbh(c) => ("train-lbh", c),
        Command::BuildIndex(c) => ("build-index", c),
        Command::Query(c) => ("query", c),
        Command::RunAl(c) => ("run-al", c),
    };
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let run = Run::parse(name, &text).with_context(|| format!("{name} config"))?;
    let written = execute(run, common.seed, &common.out).with_context(|| name.to_string())?;
    report(&written);
    Ok(())
}

fn report(written: &[PathBuf]) {
    for p in written {
        println!("{}", p.display());
    }
}
