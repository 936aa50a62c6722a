//! Experiment driver binding corpus generation, training, evaluation and
//! latent-space diagnostics into reproducible pipelines.

mod args;
mod commands;
mod manifest;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Datagen(a) => commands::run_datagen(a),
        Command::Train(a) => commands::run_train(a),
        Command::Evaluate(a) => commands::run_evaluate(a),
        Command::Diagnose(a) => commands::run_diagnose(a),
        Command::Gridsearch(a) => commands::run_gridsearch(a),
    };
    if let Err(err) = result {
        eprintln!("{err}");
        std::process::exit(err.exit_code());
    }
}
