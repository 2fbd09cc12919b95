//! Dynamic package analysis: strace parsing, indicator extraction,
//! sandboxed phase orchestration, rule matching and ML scoring.

pub mod extract;
pub mod ml;
pub mod report;
pub mod rules;
pub mod sandbox;
pub mod strace;

pub use extract::{build_phase_report, PhaseReport};
pub use report::{BehaviorReport, Phase};
pub use rules::{match_report, parse_ruleset, Alert, RuleSet};
pub use sandbox::{analyze, BackendSpec, PackageSpec, RunConfig};
