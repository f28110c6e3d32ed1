mod commands;
mod error;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::*;

/// Environmental sound synthesis from visual onomatopoeia.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
#[derive(Parser)]
#[command(name = "onoma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic onomatopoeia corpus
    GenCorpus(GenCorpusArgs),
    /// Render, stretch and slice one onomatopoeia for inspection
    Prepare(PrepareArgs),
    /// Add word- and character-level repetition variants to a corpus
    Augment(AugmentArgs),
    /// Train the acoustic model
    Train(TrainArgs),
    /// Synthesize a waveform from text and a sound event
    Synth(SynthArgs),
    /// Relative duration against word or character repetitions
    EvalRepetition(EvalRepetitionArgs),
    /// Relative duration against visual stretch ratios
    EvalStretch(EvalStretchArgs),
    /// Output diversity of image- versus label-conditioned synthesis
    EvalDiversity(EvalDiversityArgs),
    /// Compare backprop gradients with central differences
    GradCheck(GradCheckArgs),
    /// Re-emit an experiment CSV in long format for plotting
    Plotdata(PlotdataArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("ONOMA_LOG"))
        .init();
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Prepare(a) => prepare(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Synth(a) => synth(a),
        Command::EvalRepetition(a) => eval_repetition(a),
        Command::EvalStretch(a) => eval_stretch(a),
        Command::EvalDiversity(a) => eval_diversity(a),
        Command::GradCheck(a) => grad_check(a),
        Command::Plotdata(a) => plotdata(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
