use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use muse_cli::commands::{self, Format, ReportArgs, SplitArg, TrainArgs};
use muse_cli::config::{self, Layers, RunConfig};
use muse_core::training::Phase;

/// Sarcasm explanation generation: data ingestion, training, generation,
/// evaluation and analysis.
#[derive(Parser)]
#[command(name = "muse", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splitting, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL dataset, assign splits and report statistics.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Write the split dataset here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stats_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Sarcasm-classification pretraining of the encoder.
    Pretrain(TrainCmd),
    /// Explanation fine-tuning.
    Train(TrainCmd),
    /// Generate explanations with a checkpoint; writes JSONL {"id", "generation"}.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generations against reference explanations.
    Evaluate(ReportCmd),
    /// Part-of-speech overlap between generations and references.
    AnalyzePos(ReportCmd),
    /// Aggregate human ratings: adequacy, fluency, distribution, Fleiss' kappa.
    RaterAgreement {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

#[derive(clap::Args)]
struct TrainCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Resume from, or warm-start with, this checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Reuse a vocabulary file instead of building one from the train split.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ReportCmd {
    #[arg(long)]
    gens: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

impl TrainCmd {
    fn args(&self) -> TrainArgs<'_> {
        TrainArgs {
            data: &self.data,
            out_dir: &self.out_dir,
            init: self.init.as_deref(),
            vocab: self.vocab.as_deref(),
        }
    }
}

impl ReportCmd {
    fn args(&self) -> ReportArgs<'_> {
        ReportArgs {
            gens: &self.gens,
            data: &self.data,
            split: self.split,
            report: self.report.as_ref(),
            format: self.format,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg: RunConfig = config::resolve(&Layers {
        file: cli.config.as_deref(),
        env: config::env_overrides(),
        sets: &cli.sets,
        seed: cli.seed,
    })?;
    match &cli.command {
        Command::Ingest {
            data,
            out,
            stats_out,
            format,
        } => commands::ingest(&cfg, data, out.as_deref(), stats_out.as_deref(), *format),
        Command::Pretrain(t) => commands::train(&cfg, Phase::Pretrain, &t.args()),
        Command::Train(t) => commands::train(&cfg, Phase::Finetune, &t.args()),
        Command::Generate {
            checkpoint,
            data,
            split,
            out,
        } => commands::generate(&cfg, checkpoint, data, *split, out),
        Command::Evaluate(r) => commands::evaluate(&cfg, &r.args()),
        Command::AnalyzePos(r) => commands::analyze_pos(&cfg, &r.args()),
        Command::RaterAgreement {
            ratings,
            report,
            format,
        } => commands::rater_agreement(&cfg, ratings, report.as_deref(), *format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(muse_cli::exit_code(&e))
        }
    }
}
