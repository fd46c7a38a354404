use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use procwriter::coherence::{build_coherence_dataset, write_coherence_jsonl};
use procwriter::data::{load_split, SplitName};
use procwriter::decoder::StopPolicy;
use procwriter::runner::{
    evaluate_predictions, grid_search, parse_grid, run_experiment, Method, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "procwriter",
    version,
    about = "Generate and evaluate step-by-step procedures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, decode and evaluate one configuration.
    Run(RunArgs),
    /// Search a hyperparameter grid on the validation split.
    Grid {
        /// Base configuration (flat `key = value`).
        #[arg(long)]
        config: PathBuf,
        /// Grid file: `key = v1, v2, ...` per line.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Score a predictions file against a dataset split.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
    },
    /// Write synthetic coherence training data for the training split.
    SynthCoherence {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 2)]
        n_negatives: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "subeventwriter")]
    method: Method,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: SplitName,
    #[arg(long, default_value = "knn")]
    backend: String,
    #[arg(long, default_value = "logistic")]
    scorer: String,
    /// Prompt → candidates JSON for the `mock` backend.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long, default_value_t = procwriter::backend::DEFAULT_K)]
    k: usize,
    #[arg(long = "lambda")]
    lambda: Option<f64>,
    #[arg(long, default_value_t = procwriter::decoder::DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long, default_value_t = 4)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 2)]
    n_negatives: usize,
    #[arg(long)]
    fewshot: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Also write per-iteration decode traces.
    #[arg(long)]
    trace: bool,
    /// Take the generator's top candidate without re-ranking.
    #[arg(long)]
    no_coherence: bool,
    /// Stop as soon as the generator ranks the stop literal first.
    #[arg(long)]
    stop_bypass: bool,
}

impl From<RunArgs> for RunConfig {
    fn from(a: RunArgs) -> Self {
        RunConfig {
            method: a.method,
            dataset: a.dataset,
            split: a.split,
            backend: a.backend,
            scorer: a.scorer,
            mock_script: a.mock_script,
            k: a.k,
            lambda: a.lambda,
            max_steps: a.max_steps,
            use_coherence: !a.no_coherence,
            stop_policy: if a.stop_bypass {
                StopPolicy::Bypass
            } else {
                StopPolicy::Rerank
            },
            learning_rate: a.lr,
            batch_size: a.batch_size,
            epochs: a.epochs,
            n_negatives: a.n_negatives,
            fewshot: a.fewshot,
            seed: a.seed,
            out: a.out,
            trace: a.trace,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let config = RunConfig::from(args);
            let outcome = run_experiment(&config)?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            log::info!("artifacts in {}", outcome.run_dir.display());
        }
        Command::Grid { config, grid } => {
            let base = RunConfig::from_kv_file(&config)?;
            let text =
                fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let outcome = grid_search(&base, &parse_grid(&text)?)?;
            for entry in &outcome.leaderboard {
                let cell: Vec<String> = entry
                    .overrides
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                println!(
                    "{:>8.3}  {}",
                    entry.report.text_metric_sum(),
                    cell.join(" ")
                );
            }
            println!("\n# best configuration\n{}", outcome.best.to_kv_string());
        }
        Command::Eval {
            predictions,
            dataset,
            split,
        } => {
            let report = evaluate_predictions(&predictions, &dataset, split)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::SynthCoherence {
            dataset,
            n_negatives,
            seed,
            out,
        } => {
            let train = load_split(&dataset, SplitName::Train)?;
            let examples = build_coherence_dataset(&train, n_negatives, seed, &Default::default())?;
            write_coherence_jsonl(&out, &examples)?;
            log::info!(
                "wrote {} coherence examples to {}",
                examples.len(),
                out.display()
            );
        }
    }
    Ok(())
}
