use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod failure;
mod model;
mod output;

/// Reward-model experiments from a JSON config: task generation, training,
/// evaluation, update-dynamics checks, and the verifier and unseen-token
/// demonstrations.
#[derive(Parser)]
#[command(name = "rewardlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic preference dataset
    GenTask(Common),
    /// Train a scorer by full-batch gradient descent
    Train(Common),
    /// Score a trained model on preference datasets
    Eval(Common),
    /// Compare predicted and measured one-step reward changes
    DynamicsCheck(Common),
    /// Build a verifier policy and measure its generation probability
    #[command(name = "theorem1")]
    Verifier(Common),
    /// Train explicit and implicit rewards and evaluate on unseen tokens
    #[command(name = "theorem2")]
    UnseenTokens(Common),
    /// Win/tie/loss rates between two accuracy tables
    Compare(Common),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct Common {
    #[arg(long)]
    config: PathBuf,
    /// overrides the config's `seed`
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// fail instead of warning when the step size exceeds the convergence bound
    #[arg(long)]
    strict_lr: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenTask(c) => commands::gen_task(c),
        Command::Train(c) => commands::train(c),
        Command::Eval(c) => commands::eval(c),
        Command::DynamicsCheck(c) => commands::dynamics_check(c),
        Command::Verifier(c) => commands::verifier(c),
        Command::UnseenTokens(c) => commands::unseen_tokens(c),
        Command::Compare(c) => commands::compare(c),
    };
    match result.and_then(|run| {
        let dir = run.dir().to_path_buf();
        let manifest = run.finish()?;
        println!("wrote {} files and {}", manifest.files.len(), dir.join(output::MANIFEST_FILE).display());
        Ok(())
    }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure::exit_code(&e) as u8)
        }
    }
}
