//! Phase orchestration: install, import and execute a sample under a
//! tracing backend and assemble the report.

mod adapters;
mod exec;
mod replay;
mod snapshot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::extract::{build_phase_report_with, ExtractOptions};
use crate::ml::{self, Model};
use crate::report::{BehaviorReport, Label, Phase, Verdict};
use crate::rules::{match_report, RuleSet};
use crate::strace::parse_str;

pub use adapters::{plan_phases, Adapter, AdapterRegistry, ExecuteStep, PhasePlan, PlannedCommand};
pub use exec::{backend_argv, expand_template, run_phase, PhaseRun, RunError};
pub use replay::{
    BundleError, Manifest, ManifestPackage, ManifestPhase, ReplayBundle, MANIFEST, MAX_BUNDLE_BYTES,
};
pub use snapshot::{diff_new_executables, snapshot_executables, ExecutableSnapshot};

pub const DEFAULT_PHASE_TIMEOUT_S: u64 = 10;
/// Allowance on top of the phase budget for killing and reaping.
pub const TIMEOUT_GRACE_MS: u64 = 2000;

/// strace flags every traced run uses; `-o <file>` is appended per phase.
pub fn canonical_trace_flags() -> Vec<String> {
    ["-f", "-s", "4096"].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageSpec {
    pub ecosystem: String,
    pub name: Option<String>,
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("unknown ecosystem `{ecosystem}`; registered adapters: {}", known.join(", "))]
    UnknownEcosystem {
        ecosystem: String,
        known: Vec<String>,
    },
    #[error("invalid package spec ({}): {reason}", fields.join(", "))]
    Invalid { fields: Vec<String>, reason: String },
}

impl PackageSpec {
    pub fn named(ecosystem: &str, name: &str, version: Option<&str>) -> Self {
        PackageSpec {
            ecosystem: ecosystem.to_string(),
            name: Some(name.to_string()),
            version: version.map(str::to_string),
            local_path: None,
        }
    }

    pub fn local(ecosystem: &str, path: impl Into<PathBuf>) -> Self {
        PackageSpec {
            ecosystem: ecosystem.to_string(),
            name: None,
            version: None,
            local_path: Some(path.into()),
        }
    }

    pub fn validate(&self, requires_local_path: bool) -> Result<(), SpecError> {
        let invalid = |fields: &[&str], reason: &str| {
            Err(SpecError::Invalid {
                fields: fields.iter().map(|s| s.to_string()).collect(),
                reason: reason.into(),
            })
        };
        if self.ecosystem.is_empty() {
            return invalid(&["ecosystem"], "must not be empty");
        }
        let name = self.name.as_deref().filter(|n| !n.is_empty());
        if name.is_none() && self.local_path.is_none() {
            return invalid(&["name", "local_path"], "one of them is required");
        }
        if requires_local_path && self.local_path.is_none() {
            return invalid(&["local_path"], "this ecosystem analyzes a local file");
        }
        let unsafe_text = |s: &str| {
            s.chars()
                .any(|c| c.is_whitespace() || c.is_control() || c == '{' || c == '}')
        };
        if name.is_some_and(unsafe_text) {
            return invalid(
                &["name"],
                "must not contain whitespace, control characters or braces",
            );
        }
        if self.version.as_deref().is_some_and(unsafe_text) {
            return invalid(
                &["version"],
                "must not contain whitespace, control characters or braces",
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    Replay {
        bundle_path: PathBuf,
    },
    TracedSubprocess {
        strace_binary_path: PathBuf,
    },
    /// Wrapper argv with `{CMD}`, `{WORKDIR}` and `{TRACE_OUT}` placeholders.
    CommandTemplate {
        template: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub phase_timeout_s: u64,
    pub trace_flags: Vec<String>,
    pub backend: BackendSpec,
    /// Private directory for this analysis: `pkg/` is the sample's working
    /// directory and `traces/` holds the raw logs.
    pub work_root: PathBuf,
    pub adapters: AdapterRegistry,
    pub extract: ExtractOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phase_timeout_s: DEFAULT_PHASE_TIMEOUT_S,
            trace_flags: canonical_trace_flags(),
            backend: BackendSpec::TracedSubprocess {
                strace_binary_path: PathBuf::from("strace"),
            },
            work_root: std::env::temp_dir().join("pkgtrace-work"),
            adapters: AdapterRegistry::builtin(),
            extract: ExtractOptions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("replay bundle: {0}")]
    Bundle(#[from] BundleError),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), AnalyzeError> {
        if self.phase_timeout_s < 1 {
            return Err(AnalyzeError::Config(
                "phase_timeout_s must be at least 1".into(),
            ));
        }
        if let BackendSpec::CommandTemplate { template } = &self.backend {
            if !template.iter().any(|w| w.contains("{CMD}")) {
                return Err(AnalyzeError::Config(
                    "command template must contain {CMD}".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn workdir(&self) -> PathBuf {
        self.work_root.join("pkg")
    }

    fn trace_path(&self, name: &str) -> PathBuf {
        self.work_root.join("traces").join(format!("{name}.strace"))
    }
}

/// Parse and extract one phase's trace into the report.
fn record_phase(
    report: &mut BehaviorReport,
    phase: Phase,
    run: &PhaseRun,
    options: &ExtractOptions,
) {
    let trace = parse_str(&run.trace, None);
    if !trace.diagnostics.is_empty() {
        report.pipeline_notes.push(format!(
            "{phase}: {} trace diagnostics (first: line {}: {})",
            trace.diagnostics.len(),
            trace.diagnostics[0].line_no,
            trace.diagnostics[0].detail
        ));
    }
    for note in &run.notes {
        report.pipeline_notes.push(format!("{phase}: {note}"));
    }
    report.insert_phase(build_phase_report_with(
        phase,
        &trace.events,
        run.duration_ms,
        options,
    ));
}

fn phase_failure(phase: Phase, run: &PhaseRun) -> Option<String> {
    if run.timed_out {
        Some(format!("{phase} did not finish within the time budget"))
    } else if run.exit_status != Some(0) {
        Some(format!(
            "{phase} exited with status {}",
            run.exit_status
                .map_or_else(|| "unknown".to_string(), |s| s.to_string())
        ))
    } else {
        None
    }
}

fn finish(mut report: BehaviorReport, rules: &RuleSet, model: Option<&Model>) -> BehaviorReport {
    report.alerts = match_report(&report, rules);
    report.verdict = match model {
        None => Verdict::unknown(),
        Some(m) => match ml::score(m, &report) {
            Ok(p) => Verdict {
                ml_score: Some(p),
                label: if p >= m.threshold {
                    Label::Malicious
                } else {
                    Label::Benign
                },
            },
            Err(e) => {
                report
                    .pipeline_notes
                    .push(format!("model not applied: {e}"));
                Verdict::unknown()
            }
        },
    };
    report
}

/// Run the planned phases and produce the report. Only configuration
/// problems are errors; phase failures become pipeline notes. With the
/// replay backend the package identity comes from the bundle manifest.
pub fn analyze(
    spec: &PackageSpec,
    config: &RunConfig,
    rules: &RuleSet,
    model: Option<&Model>,
) -> Result<BehaviorReport, AnalyzeError> {
    config.validate()?;
    let report = match &config.backend {
        BackendSpec::Replay { bundle_path } => analyze_replay(bundle_path, config)?,
        _ => analyze_live(spec, config)?,
    };
    Ok(finish(report, rules, model))
}

fn analyze_replay(bundle_path: &Path, config: &RunConfig) -> Result<BehaviorReport, AnalyzeError> {
    let bundle = ReplayBundle::load(bundle_path)?;
    let m = &bundle.manifest;
    let package = PackageSpec {
        ecosystem: m.package.ecosystem.clone(),
        name: Some(m.package.name.clone()),
        version: m.package.version.clone(),
        local_path: None,
    };
    let mut report = BehaviorReport::new(package);
    for p in &m.phases {
        let run = bundle.phase_run(p.phase).expect("validated on load");
        record_phase(&mut report, p.phase, &run, &config.extract);
        if let Some(why) = phase_failure(p.phase, &run) {
            report.pipeline_notes.push(format!("pipeline error: {why}"));
            if p.phase == Phase::Install {
                if m.phases.len() > 1 {
                    report
                        .pipeline_notes
                        .push("later phases skipped because install failed".into());
                }
                break;
            }
        }
    }
    Ok(report)
}

fn analyze_live(spec: &PackageSpec, config: &RunConfig) -> Result<BehaviorReport, AnalyzeError> {
    let workdir = config.workdir();
    let plan = plan_phases(spec, &config.adapters, &workdir)?;
    let mut report = BehaviorReport::new(spec.clone());
    if let Err(e) = std::fs::create_dir_all(&workdir) {
        report.pipeline_notes.push(format!(
            "pipeline error: cannot create {}: {e}",
            workdir.display()
        ));
        report.insert_phase(crate::extract::PhaseReport::empty(Phase::Install, 0));
        return Ok(report);
    }
    let before = snapshot_executables(&workdir);

    for (phase, step) in &plan.steps {
        let run = match step {
            PlannedCommand::Fixed(argv) => run_phase(
                argv,
                &config.backend,
                config,
                &workdir,
                &config.trace_path(phase.as_str()),
            ),
            PlannedCommand::Dynamic => {
                let after = snapshot_executables(&workdir);
                report
                    .pipeline_notes
                    .extend(after.notes.iter().map(|n| format!("{phase}: {n}")));
                let targets = diff_new_executables(&before, &after);
                if targets.is_empty() {
                    report.pipeline_notes.push(format!(
                        "{phase}: no new executables after install; phase skipped"
                    ));
                    continue;
                }
                Ok(run_each(&targets, config, &workdir))
            }
        };
        match run {
            Ok(run) => {
                record_phase(&mut report, *phase, &run, &config.extract);
                if let Some(why) = phase_failure(*phase, &run) {
                    report.pipeline_notes.push(format!("pipeline error: {why}"));
                    if *phase == Phase::Install {
                        report
                            .pipeline_notes
                            .push("later phases skipped because install failed".into());
                        break;
                    }
                }
            }
            Err(e) => {
                report
                    .pipeline_notes
                    .push(format!("pipeline error: {phase}: {e}"));
                if *phase == Phase::Install {
                    report.insert_phase(crate::extract::PhaseReport::empty(Phase::Install, 0));
                    report
                        .pipeline_notes
                        .push("later phases skipped because install failed".into());
                    break;
                }
            }
        }
    }
    Ok(report)
}

/// Run each new executable on its own budget and concatenate the traces.
fn run_each(targets: &[PathBuf], config: &RunConfig, workdir: &Path) -> PhaseRun {
    let mut total = PhaseRun {
        trace: String::new(),
        exit_status: Some(0),
        duration_ms: 0,
        timed_out: false,
        notes: Vec::new(),
    };
    for (i, target) in targets.iter().enumerate() {
        let argv = vec![target.display().to_string()];
        match run_phase(
            &argv,
            &config.backend,
            config,
            workdir,
            &config.trace_path(&format!("execute-{i}")),
        ) {
            Ok(run) => {
                total.trace.push_str(&run.trace);
                if !total.trace.is_empty() && !total.trace.ends_with('\n') {
                    total.trace.push('\n');
                }
                total.duration_ms += run.duration_ms;
                if run.timed_out {
                    total.notes.push(format!("{} timed out", target.display()));
                }
                if run.exit_status != Some(0) {
                    total.notes.push(format!(
                        "{} exited with status {:?}",
                        target.display(),
                        run.exit_status
                    ));
                }
                total.notes.extend(run.notes);
            }
            Err(e) => total.notes.push(format!("{}: {e}", target.display())),
        }
    }
    total
}
