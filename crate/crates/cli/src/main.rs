use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bsac_cli::{compare, evaluate_checkpoint, run_all, TrainConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsac", version, about = "Train, evaluate and compare BSAC and SAC agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Output root, replacing the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Greedy returns of a saved learner.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
        /// Evaluate on this config's environment instead of the checkpoint's.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate runs of two or more configs.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Defaults to the threshold declared in the configs.
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        /// CSV destination; a `.txt` table is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

fn train(config: PathBuf, seed_override: Option<u64>, out: Option<PathBuf>, jobs: usize) -> Result<()> {
    let mut cfg = TrainConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed_override {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    eprintln!("{}: config {} seeds {:?}", cfg.name, &cfg.hash()[..12], cfg.seeds);
    let results = run_all(&cfg, jobs, &|seed, p| {
        eprintln!("seed {seed} step {:>8}  return {:>10.3} ± {:.3}", p.step, p.mean, p.std);
    });
    let mut failed = 0;
    for (seed, r) in results {
        match r {
            Ok(rec) => println!(
                "seed {seed}: final return {:.3} after {} updates in {:.1}s -> {}",
                rec.evals.last().map_or(f64::NAN, |e| e.mean),
                rec.updates,
                rec.wall_clock_secs,
                bsac_cli::run::seed_dir(&cfg, seed).display()
            ),
            Err(e) => {
                failed += 1;
                eprintln!("seed {seed} failed: {e}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} seed(s) failed");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed_override, out, jobs } => train(config, seed_override, out, jobs),
        Command::Eval { checkpoint, episodes, seed, config } => {
            let env = config.map(|c| TrainConfig::load(&c).map(|c| c.env)).transpose()?;
            let stats = evaluate_checkpoint(&checkpoint, env, episodes, seed)?;
            println!("mean {} std {} over {episodes} episodes", stats.mean, stats.std);
            Ok(())
        }
        Command::Compare { runs, threshold, out } => {
            let cmp = compare(&runs, threshold)?;
            std::fs::write(&out, cmp.to_csv()?).with_context(|| format!("writing {}", out.display()))?;
            let text = cmp.to_text();
            std::fs::write(out.with_extension("txt"), &text)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
