use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod rules;
mod serve;
mod train;

/// Exit codes shared by every subcommand.
pub mod exit {
    pub const OK: u8 = 0;
    pub const ERROR: u8 = 1;
    pub const INVALID_INPUT: u8 = 2;
    pub const ALERTS: u8 = 3;
}

#[derive(Parser)]
#[command(
    name = "pkgtrace",
    version,
    about = "Dynamic behavior analysis of software packages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a package through install, import and execute, then report.
    Analyze(analyze::AnalyzeArgs),
    /// Analyze a recorded trace bundle (directory or .tar.gz).
    Replay {
        bundle: PathBuf,
        #[command(flatten)]
        common: analyze::CommonArgs,
    },
    /// Check or apply detection rules.
    Rules {
        #[command(subcommand)]
        command: rules::RulesCommand,
    },
    /// Train a classifier on labelled reports or traces.
    Train(train::TrainArgs),
    /// Run the job service and HTTP API.
    Serve(serve::ServeArgs),
}

/// The error chain, skipping causes whose text an outer message already
/// repeats.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => analyze::run(args),
        Command::Replay { bundle, common } => {
            analyze::run(analyze::AnalyzeArgs::replay(bundle, common))
        }
        Command::Rules { command } => rules::run(command),
        Command::Train(args) => train::run(args),
        Command::Serve(args) => serve::run(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit::ERROR)
        }
    }
}
