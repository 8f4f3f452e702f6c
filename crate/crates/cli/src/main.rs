//! `trajscore`: generate scenarios, build the action vocabulary and reward
//! table, train, evaluate open and closed loop, and plot the results.

mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trajscore::error::{FormatError, ModelError, RewardError, TrainError, VocabError};
use trajscore::train::Paradigm;

use manifest::{Mismatch, Usage};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "trajscore", version, about = "Reward-only trajectory scoring planner")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random draw of this command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file overriding preset values, by section.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "tiny")]
    preset: String,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scenario clips to a `.clips.jsonl` file.
    GenScenarios {
        #[arg(long)]
        out: PathBuf,
        /// Total clips, split evenly over the families.
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Cluster sampled plans into the ordered action vocabulary.
    BuildVocab {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Score every vocabulary entry on every frame.
    BuildRewards {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Refuse unless the vocabulary is the one this checkpoint was trained on.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long)]
        paradigm: Option<Paradigm>,
        /// Leading vocabulary entries used as the training action space.
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select one action per frame and score it against the reward table.
    EvalOpen {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SelectorKind::Model)]
        selector: SelectorKind,
        #[arg(long)]
        inference_vocab_size: Option<usize>,
        #[arg(long, value_enum, default_value_t = Split::Heldout)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive each clip closed loop against its logged agents.
    Rollout {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SelectorKind::Model)]
        planner: SelectorKind,
        #[arg(long)]
        inference_vocab_size: Option<usize>,
        /// Roll out only the first this-many clips.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render training curves and rollout overlays to SVG and CSV.
    Plot {
        /// Metrics CSV written by `train`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Episode JSON written by `rollout`.
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    Model,
    Random,
    Oracle,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Heldout,
    Train,
    All,
}

fn format_mismatch(f: Option<&FormatError>) -> bool {
    matches!(f, Some(FormatError::HashMismatch { .. }))
}

/// Hash failures anywhere in the chain map to their own exit status.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Mismatch>() {
            return EXIT_MISMATCH;
        }
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        let mismatch = format_mismatch(cause.downcast_ref())
            || match cause.downcast_ref::<RewardError>() {
                Some(RewardError::HashMismatch { .. } | RewardError::Dimensions { .. }) => true,
                Some(RewardError::Format(f)) => format_mismatch(Some(f)),
                _ => false,
            }
            || matches!(cause.downcast_ref::<VocabError>(), Some(VocabError::Format(f)) if format_mismatch(Some(f)))
            || matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Format(f)) if format_mismatch(Some(f)))
            || matches!(
                cause.downcast_ref::<TrainError>(),
                Some(TrainError::Reward(RewardError::HashMismatch { .. } | RewardError::Dimensions { .. }))
            );
        if mismatch {
            return EXIT_MISMATCH;
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.common.workers).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    let result = match cli.command {
        Command::GenScenarios { out, clips } => commands::gen_scenarios(&cli.common, &out, clips),
        Command::BuildVocab {
            out,
            vocab_size,
            candidates,
        } => commands::build_vocab(&cli.common, &out, vocab_size, candidates),
        Command::BuildRewards {
            dataset,
            vocab,
            checkpoint,
            out,
        } => commands::build_rewards(&cli.common, &dataset, &vocab, checkpoint.as_deref(), &out),
        Command::Train {
            dataset,
            vocab,
            rewards,
            paradigm,
            vocab_size,
            epochs,
            out,
        } => commands::train(
            &cli.common,
            &commands::TrainInputs {
                dataset,
                vocab,
                rewards,
                paradigm,
                vocab_size,
                epochs,
            },
            &out,
        ),
        Command::EvalOpen {
            dataset,
            vocab,
            rewards,
            checkpoint,
            selector,
            inference_vocab_size,
            split,
            out,
        } => commands::eval_open(
            &cli.common,
            &commands::EvalInputs {
                dataset,
                vocab,
                rewards,
                checkpoint,
                selector,
                inference_vocab_size,
                split,
            },
            &out,
        ),
        Command::Rollout {
            dataset,
            vocab,
            checkpoint,
            planner,
            inference_vocab_size,
            limit,
            out,
        } => commands::rollout(
            &cli.common,
            &commands::RolloutInputs {
                dataset,
                vocab,
                checkpoint,
                planner,
                inference_vocab_size,
                limit,
            },
            &out,
        ),
        Command::Plot {
            metrics,
            episodes,
            dataset,
            vocab,
            out,
        } => plot::run(metrics.as_deref(), episodes.as_deref(), dataset.as_deref(), vocab.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
