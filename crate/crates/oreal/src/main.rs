//! Command-line front end: dataset generation, experiment runs, report
//! merging, and the allocation brute-force check.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use oreal::balancing::{
    brute_force_items_per_class, items_per_class, min_after_allocation, ClassCounts,
};
use oreal::harness::{
    emit_results, load_dataset, run_experiment, write_report, ExperimentConfig, GenConfig,
    Prepared,
};
use oreal::model::TrainConfig;
use oreal::{AggregationMode, LabelScheme, StrategyKind};

#[derive(Parser)]
#[command(
    name = "oreal",
    about = "Superpixel active learning for semantic segmentation: synthetic datasets, \
             query strategies, and a closed-loop evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset with ground truth and superpixel partitions.
    Gen(GenArgs),
    /// Run one strategy through the full active-learning loop.
    Run(RunArgs),
    /// Merge run directories into one combined report.
    Report(ReportArgs),
    /// Sweep the budget-allocation brute-force oracle against the
    /// water-filling solver.
    BruteforceDelta(BruteforceArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON config; omit to use the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// random | entropy | bvsb | revisiting-sp | pixelbal | cbal | oreal
    #[arg(long)]
    strategy: String,
    /// mean | max
    #[arg(long, default_value = "max")]
    agg: String,
    /// Superpixels annotated per step.
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 6)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Root of the per-seed rng streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "dominant")]
    scheme: String,
    /// Record wall-clock step timings (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to merge.
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BruteforceArgs {
    #[arg(long)]
    classes: usize,
    /// Sweep every per-class count in 0..=max-count.
    #[arg(long)]
    max_count: usize,
    /// Sweep every budget in 0..=budget.
    #[arg(long)]
    budget: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            // Machine-readable error envelope on stderr.
            let payload = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Gen(args) => gen(args),
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
        Command::BruteforceDelta(args) => bruteforce_delta(args),
    }
}

fn gen(args: GenArgs) -> anyhow::Result<ExitCode> {
    let config: GenConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GenConfig::default(),
    };
    let manifest = oreal::harness::generate_and_save(&config, &args.out)?;
    println!(
        "wrote {} scenes ({} train / {} val / {} test) to {}",
        manifest.splits.train.len() + manifest.splits.val.len() + manifest.splits.test.len(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
        args.out.display()
    );
    println!(
        "train class pixel frequencies: {:?}",
        manifest.class_pixel_frequencies.train
    );
    println!(
        "dominant-label disagreement: train {:.4}, val {:.4}",
        manifest.dominant_disagreement.train, manifest.dominant_disagreement.val
    );
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let strategy: StrategyKind = args.strategy.parse()?;
    let aggregation = match args.agg.as_str() {
        "mean" => AggregationMode::Mean,
        "max" => AggregationMode::Max,
        other => bail!("unknown aggregation '{other}', expected mean or max"),
    };
    let scheme = match args.scheme.as_str() {
        "dominant" => LabelScheme::Dominant,
        "weak" => LabelScheme::Weak,
        other => bail!("unknown scheme '{other}', expected dominant or weak"),
    };

    let (dataset, partitions, _) = load_dataset(&args.data)?;
    let prepared = Prepared::from_parts(dataset, partitions);

    let mut cfg = ExperimentConfig::new(strategy, aggregation);
    cfg.budget = args.budget;
    cfg.steps = args.steps;
    cfg.num_seeds = args.seeds;
    cfg.seed_root = args.seed;
    cfg.scheme = scheme;
    cfg.record_timing = args.timing;
    cfg.train = TrainConfig {
        learning_rate: args.learning_rate,
        max_epochs: args.max_epochs,
        ..TrainConfig::default()
    };

    let result = run_experiment(&prepared, &cfg)?;
    emit_results(&result, &args.out)?;
    for &seed in &result.aborted_seeds {
        eprintln!("warning: seed {seed} aborted without labels");
    }
    let summary = oreal::harness::summarize(&result);
    println!(
        "{} ({}): AuALC {:.4} +- {:.4} over {} seeds, reference mIoU {:.4} -> {}",
        summary.strategy,
        summary.aggregation,
        summary.aualc_mean,
        summary.aualc_std,
        cfg.num_seeds,
        summary.reference_miou,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> anyhow::Result<ExitCode> {
    write_report(&args.inputs, &args.out)?;
    println!(
        "merged {} runs into {}",
        args.inputs.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn bruteforce_delta(args: BruteforceArgs) -> anyhow::Result<ExitCode> {
    if args.classes == 0 {
        bail!("--classes must be >= 1");
    }
    let mut checked = 0u64;
    let mut mismatches = 0u64;
    let mut counts = vec![0usize; args.classes];
    loop {
        for budget in 0..=args.budget {
            let c = ClassCounts(counts.clone());
            let greedy = items_per_class(&c, budget);
            let exhaustive = brute_force_items_per_class(&c, budget);
            checked += 1;
            if greedy.total() != budget
                || min_after_allocation(&c, &greedy) != min_after_allocation(&c, &exhaustive)
            {
                mismatches += 1;
                println!(
                    "MISMATCH n={counts:?} budget={budget}: water-filling {:?} (min {}), \
                     brute force {:?} (min {})",
                    greedy.0,
                    min_after_allocation(&c, &greedy),
                    exhaustive.0,
                    min_after_allocation(&c, &exhaustive)
                );
            }
        }
        // Odometer over count vectors in {0..=max_count}^classes.
        let mut pos = 0;
        loop {
            if pos == counts.len() {
                break;
            }
            counts[pos] += 1;
            if counts[pos] <= args.max_count {
                break;
            }
            counts[pos] = 0;
            pos += 1;
        }
        if pos == counts.len() {
            break;
        }
    }
    println!("checked {checked} instances: {mismatches} mismatches");
    Ok(if mismatches == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
