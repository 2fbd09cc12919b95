use std::path::PathBuf;

use anyhow::Context;
use clap::Subcommand;
use pkgtrace_core::rules::RuleError;
use pkgtrace_core::{match_report, parse_ruleset, BehaviorReport};

use crate::analyze::write_output;
use crate::exit;

#[derive(Subcommand, Debug)]
pub enum RulesCommand {
    /// Parse a ruleset and report the first error with its position.
    Lint { file: PathBuf },
    /// Match a saved report against a ruleset and print the alerts as JSON.
    Scan {
        file: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
}

fn lint_message(file: &std::path::Path, e: &RuleError) -> String {
    match e {
        RuleError::DuplicateId { .. } => {
            let (line, column) = e.position();
            format!("{}:{line}:{column}: {e}", file.display())
        }
        // These already lead with "line L, column C".
        _ => format!("{}: {e}", file.display()),
    }
}

pub fn run(cmd: RulesCommand) -> anyhow::Result<u8> {
    match cmd {
        RulesCommand::Lint { file } => {
            let source = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            match parse_ruleset(&source) {
                Ok(set) => {
                    eprintln!("{}: {} rule(s) ok", file.display(), set.len());
                    Ok(exit::OK)
                }
                Err(e) => {
                    eprintln!("{}", lint_message(&file, &e));
                    Ok(exit::INVALID_INPUT)
                }
            }
        }
        RulesCommand::Scan { file, report, out } => {
            let source = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let rules = match parse_ruleset(&source) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{}", lint_message(&file, &e));
                    return Ok(exit::INVALID_INPUT);
                }
            };
            let text = std::fs::read_to_string(&report)
                .with_context(|| format!("reading {}", report.display()))?;
            let report = BehaviorReport::from_json(&text)
                .with_context(|| format!("parsing {}", report.display()))?;
            let alerts = match_report(&report, &rules);
            let mut json = serde_json::to_string_pretty(&alerts)?;
            json.push('\n');
            write_output(&out, &json)?;
            eprintln!("{} alert(s)", alerts.len());
            Ok(if alerts.is_empty() {
                exit::OK
            } else {
                exit::ALERTS
            })
        }
    }
}
