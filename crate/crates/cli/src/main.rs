mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::CommonArgs;

/// Analyzer-guided code reduction, merge-back and fix-dataset tooling.
#[derive(Parser)]
#[command(name = "reduct", version, about)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shrink a file while the analyzer still raises one report
    Reduce(commands::ReduceArgs),
    /// Splice a prediction for reduced code back into the original file
    Merge(commands::MergeArgs),
    /// Run the analyzer and print its reports as JSON
    Analyze(commands::AnalyzeArgs),
    /// List reports fixed by each before/after pair of a manifest
    Mine(commands::MineArgs),
    /// Build dataset samples in the requested flavors
    Flavor(commands::FlavorArgs),
    /// Score predictions with Pass@k and ExactMatch@k
    Eval(commands::EvalArgs),
    /// Build few-shot prompts and optionally query a model
    Prompt(commands::PromptArgs),
    /// Compare analyzer calls of provenance-guided and plain reduction
    BenchCalls(commands::BenchArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Reduce(a) => commands::reduce(&cli.common, a),
        Command::Merge(a) => commands::merge(a),
        Command::Analyze(a) => commands::analyze(&cli.common, a),
        Command::Mine(a) => commands::mine(&cli.common, a),
        Command::Flavor(a) => commands::flavor(&cli.common, a),
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::Prompt(a) => commands::prompt(&cli.common, a),
        Command::BenchCalls(a) => commands::bench_calls(&cli.common, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
