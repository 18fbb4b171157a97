//! `gptd`: degrade GPT-2, score corpora with the paired perplexity ratio,
//! search impairment patterns, and probe model pairs with generation,
//! lexical statistics and saliency.

mod commands;
mod opts;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(name = "gptd", version, about = "Paired GPT-2 / degraded GPT-2 perplexity toolkit")]
struct Cli {
    /// Worker threads for scoring, search and generation [default: all cores].
    /// Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a degraded copy of a checkpoint and a report of what was zeroed.
    Degrade(DegradeCmd),
    /// Paired perplexities and ratio for every participant of a corpus.
    Score(ScoreCmd),
    /// AUC, accuracy at the equal-error rate and MMSE correlation of a score table.
    Eval(EvalCmd),
    /// Rank every impairment pattern of a strategy by AUC.
    Search(SearchCmd),
    /// k-fold cross-validation of the pattern search.
    Cv(CvCmd),
    /// Search on one corpus, evaluate the winner on another.
    Crossdataset(CrossDatasetCmd),
    /// Beam-search continuations of prompts under both models.
    Generate(GenerateCmd),
    /// Type-token ratio and lexical frequency of generated text.
    Lexstats(LexstatsCmd),
    /// Gradient-times-input saliency of the next-token prediction.
    Saliency(SaliencyCmd),
    /// Synthetic corpus: controls sampled from the base model, cases from the degraded one.
    MakeSanityCorpus(SanityCmd),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Degrade(a) => cmd_degrade(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Search(a) => cmd_search(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Crossdataset(a) => cmd_crossdataset(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Lexstats(a) => cmd_lexstats(a),
        Command::Saliency(a) => cmd_saliency(a),
        Command::MakeSanityCorpus(a) => cmd_make_sanity_corpus(a),
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
