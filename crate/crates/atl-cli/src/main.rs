//! Command-line front end: prequential benchmark runs over CSV streams and
//! seed-deterministic synthetic stream generation.

use anyhow::{bail, Context};
use atl::stream::{run_prequential, write_metrics, DatasetConfig};
use atl::synth::{generate, write_csv, SyntheticKind};
use atl::trainer::TrainerConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "atl", version, about = "Online transfer learning over data streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the prequential test-then-train benchmark on a CSV stream.
    Run(RunArgs),
    /// Generate a synthetic drifting stream as CSV.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    /// Full system.
    None,
    /// Alignment step disabled.
    A,
    /// Mixture-driven width adjustment replaced by a single running
    /// Gaussian with one-unit growth.
    B,
    /// Hidden width frozen.
    C,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the input CSV (headered; numeric features).
    #[arg(long)]
    dataset: PathBuf,

    /// Name of the label column (or its index for headerless files).
    #[arg(long, default_value = "label")]
    label_column: String,

    /// Rows per stream chunk.
    #[arg(long, default_value_t = 1000)]
    chunk_size: usize,

    /// Training passes per chunk (1 = strict single-pass).
    #[arg(long, default_value_t = 1)]
    epochs: usize,

    /// SGD learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,

    /// SGD momentum.
    #[arg(long, default_value_t = 0.95)]
    momentum: f64,

    /// Fraction of input attributes zeroed by masking noise.
    #[arg(long, default_value_t = 0.1)]
    noise_fraction: f64,

    /// Seed for every random choice of the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Feature ablation to apply.
    #[arg(long, value_enum, ignore_case = true, default_value_t = Ablation::None)]
    ablation: Ablation,

    /// Output path for the per-chunk metrics CSV.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,

    /// Fraction of each chunk biased into the source domain.
    #[arg(long, default_value_t = 0.5)]
    source_fraction: f64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Which synthetic stream to generate.
    #[arg(long, value_enum)]
    kind: Kind,

    /// Number of rows (SEA: multiple of 4, hyperplane: multiple of 5).
    #[arg(long)]
    rows: usize,

    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Sea,
    Hyperplane,
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    if args.epochs == 0 {
        bail!("--epochs must be >= 1");
    }
    if !args.dataset.exists() {
        bail!("dataset file {} does not exist", args.dataset.display());
    }
    let trainer = TrainerConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        epochs_per_batch: args.epochs,
        noise_fraction: args.noise_fraction,
        disable_kl: args.ablation == Ablation::A,
        disable_agmm_ns: args.ablation == Ablation::B,
        disable_structural: args.ablation == Ablation::C,
        seed: args.seed,
    };
    trainer.validate().context("invalid trainer flags")?;
    let dataset = DatasetConfig {
        path: args.dataset.clone(),
        label_column: args.label_column,
        chunk_size: args.chunk_size,
        source_fraction: args.source_fraction,
    };
    dataset.validate().context("invalid dataset flags")?;

    let metrics = run_prequential(&dataset, &trainer)?;
    write_metrics(&metrics, &args.out)
        .with_context(|| format!("cannot write metrics to {}", args.out.display()))?;
    println!("{}", metrics.summary_json(&args.dataset, &trainer));
    Ok(())
}

fn generate_cmd(args: GenerateArgs) -> anyhow::Result<()> {
    let kind = match args.kind {
        Kind::Sea => SyntheticKind::Sea,
        Kind::Hyperplane => SyntheticKind::Hyperplane,
    };
    let dataset = generate(kind, args.rows, args.seed)?;
    write_csv(&dataset, &args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    eprintln!(
        "wrote {} rows to {}",
        dataset.labels.len(),
        args.out.display()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Generate(args) => generate_cmd(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
