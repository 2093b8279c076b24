use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sare::commands::{self, EvalOptions, RunOptions};
use sare::config::LoadedConfig;
use sare::report::{render_table, Pairing};
use sare::{Error, Result};
use sare_core::data::GeneratorConfig;
use sare_core::eval::Variant;

/// Situation-aware ranking experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate {
        /// Generator config (JSON); omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train one model per seed.
    Train(RunArgs),
    /// Evaluate checkpoints on the test split.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint files; defaults to every seed checkpoint of the experiment.
        #[arg(long, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "combined", value_parser = parse_variant)]
        variant: Variant,
        /// Report to compare against with paired t-tests.
        #[arg(long)]
        baseline_report: Option<PathBuf>,
        /// Pair by seed, or by (seed, list) when both reports carry per-list metrics.
        #[arg(long, default_value = "seed", value_parser = parse_pairing)]
        pairing: Pairing,
    },
    /// Train and evaluate the full model and each ablation.
    Ablate(RunArgs),
    /// Print the parameter census.
    CountParams {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds overriding the config.
    #[arg(long, alias = "seed", value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            force: self.force,
            progress: !self.quiet,
        }
    }
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: sare_core::Error| e.to_string())
}

fn parse_pairing(s: &str) -> std::result::Result<Pairing, String> {
    match s {
        "seed" => Ok(Pairing::Seed),
        "list" => Ok(Pairing::List),
        _ => Err(format!("unknown pairing `{s}`, expected seed or list")),
    }
}

fn generator_config(path: Option<&PathBuf>) -> Result<GeneratorConfig> {
    let Some(path) = path else {
        return Ok(GeneratorConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out, force } => {
            let mut g = generator_config(config.as_ref())?;
            if let Some(s) = seed {
                g.seed = s;
            }
            let d = commands::generate(&g, &out, force)?;
            println!("wrote {} lists to {}", d.lists.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = LoadedConfig::read(&args.config)?;
            for t in commands::train(&cfg, &args.options())? {
                println!(
                    "seed {}: best epoch {} valid ndcg@{} {:.4} -> {}",
                    t.seed,
                    t.fit.best_epoch,
                    cfg.config.train.eval_k,
                    t.fit.best_valid_ndcg,
                    t.checkpoint.display()
                );
            }
        }
        Command::Evaluate {
            run,
            checkpoints,
            variant,
            baseline_report,
            pairing,
        } => {
            let cfg = LoadedConfig::read(&run.config)?;
            let opts = EvalOptions {
                run: run.options(),
                checkpoints,
                variant: Some(variant),
                baseline: baseline_report,
                pairing,
            };
            let (report, baseline) = commands::evaluate(&cfg, &opts)?;
            let rows: Vec<_> = baseline.iter().chain(std::iter::once(&report)).collect();
            print!("{}", render_table(&rows));
        }
        Command::Ablate(args) => {
            let cfg = LoadedConfig::read(&args.config)?;
            print!("{}", commands::ablate(&cfg, &args.options())?.table);
        }
        Command::CountParams { config } => {
            let cfg = LoadedConfig::read(&config)?;
            print!("{}", commands::count_params(&cfg)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
