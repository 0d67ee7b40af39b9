use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use muscaps::ErrorClass;

mod commands;
mod config;

/// Music captioning pipeline: synthetic data, training, captioning, metrics and retrieval.
///
/// Settings resolve as flags, then the `--config` file, then defaults. Outputs
/// default to `$MUSCAPS_OUT` (or the working directory). Exit codes: 0 success,
/// 1 usage error, 2 data or I/O error, 3 numeric failure.
#[derive(Debug, Parser)]
#[command(name = "muscaps", version)]
struct Cli {
    /// TOML file with one table per subcommand, e.g. `[train]`, keys named like the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic audio-caption corpus
    GenData(config::GenDataFlags),
    /// Filter, split and train; writes checkpoints/ and train_log.jsonl
    Train(config::TrainFlags),
    /// Decode captions for one split of a corpus
    Caption(config::CaptionFlags),
    /// Score captions against references (BLEU, ROUGE-L, CIDEr)
    Eval(config::EvalFlags),
    /// Rank a split's clips for each of its captions
    Retrieve(config::RetrieveFlags),
    /// Compare analytic and finite-difference gradients of the full model
    GradCheck(config::GradCheckFlags),
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<muscaps::Error>() {
        return match e.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        };
    }
    if err.is::<UsageError>() {
        1
    } else if err.is::<NumericFailure>() {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref();
    match &cli.command {
        Command::GenData(f) => commands::gen_data(&config::GenData::resolve(file, f)?),
        Command::Train(f) => commands::train(&config::Train::resolve(file, f)?),
        Command::Caption(f) => commands::caption(&config::Caption::resolve(file, f)?),
        Command::Eval(f) => commands::eval(&config::Eval::resolve(file, f)?),
        Command::Retrieve(f) => commands::retrieve(&config::Retrieve::resolve(file, f)?),
        Command::GradCheck(f) => commands::grad_check_cmd(&config::GradCheck::resolve(file, f)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already name their cause.
            if e.is::<muscaps::Error>() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
