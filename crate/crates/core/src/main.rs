use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aos::harness::{self, ExperimentConfig, ExportFormat, RunArtifact};
use aos::metrics::AggregateCurve;
use aos::AosError;
use clap::{Args, Parser, Subcommand};

/// Active output selection experiments on toy multi-output processes.
#[derive(Debug, Parser)]
#[command(name = "aos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment from a config file and/or flags.
    Run(RunArgs),
    /// Run all three setups with all four strategies at default settings.
    Reproduce(ReproduceArgs),
    /// Re-execute a stored run artifact and check it matches.
    Replay(ReplayArgs),
    /// Rebuild aggregate and savings tables from stored run artifacts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    setup: Option<u8>,
    /// Comma-separated subset of SF,RR,CVH,CVHn.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    filter_window: Option<usize>,
    /// Filtered CV error at which an output counts as finished.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    output: PathBuf,
    /// Override the number of runs per setup (default 15).
    #[arg(long)]
    runs: Option<usize>,
    /// Override the measurement budget (default 100).
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// A run_*.json artifact written by `run` or `reproduce`.
    artifact: PathBuf,
    /// Where to write the replayed artifact.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding an `artifacts/` folder.
    dir: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<AosError> for Failure {
    fn from(e: AosError) -> Self {
        match e {
            AosError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.setup {
        cfg.setup_id = v;
    }
    if let Some(s) = &args.strategies {
        cfg.strategies = harness::parse_strategies(s)?;
    }
    if let Some(v) = args.runs {
        cfg.n_runs = v;
    }
    if let Some(v) = args.budget {
        cfg.budget = v;
    }
    if let Some(v) = args.n_init {
        cfg.n_init = v;
    }
    if let Some(v) = args.cv_folds {
        cfg.cv_folds = v;
    }
    if let Some(v) = args.filter_window {
        cfg.filter_window = v;
    }
    if args.threshold.is_some() {
        cfg.quality_threshold = args.threshold;
    }
    if let Some(v) = args.candidates {
        cfg.candidate_count = v;
    }
    if let Some(v) = args.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = &args.output {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(title: &str, agg: &[AggregateCurve], budget: usize) {
    println!("{title}");
    for c in agg {
        println!(
            "  {:<5} runs={:<3} final mean={:.5} std={:.5}",
            c.strategy.to_string(),
            c.n_runs,
            c.final_mean().unwrap_or(f64::NAN),
            c.std.last().copied().unwrap_or(f64::NAN)
        );
    }
    for row in harness::savings(agg, budget) {
        match row.n_reach {
            Some(n) => println!("  {:<5} reaches SF end value at n={n} ({:.0}% of budget)", row.strategy.to_string(), 100.0 * n as f64 / budget as f64),
            None => println!("  {:<5} never reaches SF end value", row.strategy.to_string()),
        }
    }
}

fn run_and_export(cfg: &ExperimentConfig, format: ExportFormat) -> Result<(), Failure> {
    let artifacts = harness::run_experiment(cfg)?;
    for a in &artifacts {
        for f in &a.failures {
            eprintln!("run {} strategy {} failed: {}", a.run_index, f.strategy, f.message);
        }
    }
    let files = harness::export_results(&artifacts, &cfg.output_dir, format)?;
    let agg = harness::aggregate(&artifacts)?;
    print_summary(&format!("setup {} -> {}", cfg.setup_id, cfg.output_dir.display()), &agg, cfg.budget);
    println!("  wrote {} run artifacts, {}", files.artifacts.len(), files.aggregate.display());
    if artifacts.iter().any(|a| !a.failures.is_empty()) {
        return Err(Failure::Runtime("some strategies failed; see diagnostics above".into()));
    }
    Ok(())
}

fn replay(args: &ReplayArgs) -> Result<(), Failure> {
    let original = RunArtifact::load(&args.artifact)?;
    let again = harness::replay(&original)?;
    if let Some(dir) = &args.output {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        let path = dir.join(again.file_name());
        let text = serde_json::to_string(&again).map_err(|e| Failure::Runtime(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    if harness::same_metrics(&original, &again) {
        println!("replay of run {} matches: {} curves identical", original.run_index, again.curves.len());
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "replay of {} produced different metric values",
            args.artifact.display()
        )))
    }
}

fn report(dir: &Path, format: ExportFormat) -> Result<(), Failure> {
    let artifacts = harness::load_artifacts(dir)?;
    harness::export_results(&artifacts, dir, format)?;
    let agg = harness::aggregate(&artifacts)?;
    print_summary(&format!("report for {}", dir.display()), &agg, artifacts[0].config.budget);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let format: ExportFormat = args.format.parse()?;
            let cfg = build_config(&args)?;
            run_and_export(&cfg, format)
        }
        Command::Reproduce(args) => {
            let format: ExportFormat = args.format.parse()?;
            for mut cfg in harness::reproduce_configs(args.seed, &args.output) {
                if let Some(r) = args.runs {
                    cfg.n_runs = r;
                }
                if let Some(b) = args.budget {
                    cfg.budget = b;
                }
                cfg.workers = args.workers;
                cfg.validate()?;
                run_and_export(&cfg, format)?;
            }
            Ok(())
        }
        Command::Replay(args) => replay(&args),
        Command::Report(args) => {
            let format: ExportFormat = args.format.parse()?;
            report(&args.dir, format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
