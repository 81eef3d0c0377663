use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use spikeprop_core::config::{ExperimentKind, RunConfig};
use spikeprop_core::experiment::{self, DATA_DIR_ENV};

/// Train the spiking network on MNIST and write metrics.csv, config.toml and
/// summary.toml to the output directory.
#[derive(Debug, Parser)]
#[command(name = "spikeprop", version)]
struct Args {
    /// TOML run configuration; absent keys take default values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// proposed | bp-only | self-training
    #[arg(long)]
    kind: Option<ExperimentKind>,
    #[arg(long)]
    labeled_per_class: Option<usize>,
    /// Directory holding train-images-idx3-ubyte[.gz] and train-labels-idx1-ubyte[.gz].
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

fn resolve(args: &Args) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(kind) = args.kind {
        cfg.kind = kind;
    }
    if let Some(n) = args.labeled_per_class {
        cfg.split.labeled_per_class = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match real_main(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(args: &Args) -> anyhow::Result<()> {
    let cfg = resolve(args)?;
    if args.print_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let data_dir = experiment::resolve_data_dir(args.data_dir.as_deref(), &cfg)?;
    let quiet = args.quiet;
    let mut progress = |m: &spikeprop_core::pipeline::EpochMetrics| {
        if !quiet {
            eprintln!(
                "epoch {:>4} {:<18} acc {:.4} ± {:.4}  sim {:>9.1}s  wall {:>8.1}s",
                m.epoch,
                m.phase.to_string(),
                m.mean_accuracy,
                m.accuracy_std,
                m.seconds,
                m.wall_seconds
            );
        }
    };
    let artifacts = experiment::run(&cfg, &data_dir, &mut progress)
        .with_context(|| format!("{} run with seed {}", cfg.kind, cfg.seed))?;
    let s = &artifacts.summary;
    println!(
        "best {:.4} at epoch {} ({}), final {:.4}, wall {:.1}s -> {}",
        s.best_accuracy,
        s.best_epoch,
        s.best_phase,
        s.final_accuracy,
        s.total_wall_seconds,
        cfg.output_dir.display()
    );
    Ok(())
}
