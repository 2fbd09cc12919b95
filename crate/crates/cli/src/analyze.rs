use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use pkgtrace_core::ml::load_model;
use pkgtrace_core::rules::DEFAULT_RULES;
use pkgtrace_core::sandbox::DEFAULT_PHASE_TIMEOUT_S;
use pkgtrace_core::{
    analyze, parse_ruleset, BackendSpec, BehaviorReport, PackageSpec, RuleSet, RunConfig,
};

use crate::exit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// Run under strace directly.
    Traced,
    /// Run through a wrapper command such as a container launcher.
    Template,
    /// Read a recorded bundle.
    Replay,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Package ecosystem (pypi, npm, rubygems, crates, script, ...).
    #[arg(long)]
    pub ecosystem: Option<String>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long = "version", id = "pkg_version")]
    pub version: Option<String>,
    /// Local package file or script instead of a registry name.
    #[arg(long)]
    pub path: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Backend::Traced)]
    pub backend: Backend,
    /// Bundle for `--backend replay`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// strace binary for `--backend traced`.
    #[arg(long, default_value = "strace")]
    pub strace: PathBuf,
    /// Wrapper for `--backend template`, as one shell-quoted string with
    /// `{CMD}`, `{WORKDIR}` and `{TRACE_OUT}` placeholders.
    #[arg(long)]
    pub template: Option<String>,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Ruleset file; the built-in rules are used when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Trained model for an ML verdict.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Per-phase time budget in seconds.
    #[arg(long, default_value_t = DEFAULT_PHASE_TIMEOUT_S)]
    pub timeout: u64,
    /// Where to write the report; `-` is standard output.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Keep the sample's working directory and raw traces here.
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
}

impl AnalyzeArgs {
    pub fn replay(bundle: PathBuf, common: CommonArgs) -> Self {
        AnalyzeArgs {
            ecosystem: None,
            name: None,
            version: None,
            path: None,
            backend: Backend::Replay,
            bundle: Some(bundle),
            strace: PathBuf::from("strace"),
            template: None,
            common,
        }
    }
}

pub fn load_rules(path: Option<&Path>) -> anyhow::Result<RuleSet> {
    let Some(path) = path else {
        return Ok(parse_ruleset(DEFAULT_RULES).expect("built-in rules parse"));
    };
    let source =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_ruleset(&source).with_context(|| format!("{}", path.display()))
}

fn backend(args: &AnalyzeArgs) -> anyhow::Result<BackendSpec> {
    Ok(match args.backend {
        Backend::Replay => {
            let Some(bundle) = &args.bundle else {
                bail!("--backend replay needs --bundle")
            };
            BackendSpec::Replay {
                bundle_path: bundle.clone(),
            }
        }
        Backend::Traced => BackendSpec::TracedSubprocess {
            strace_binary_path: args.strace.clone(),
        },
        Backend::Template => {
            let Some(t) = &args.template else {
                bail!("--backend template needs --template")
            };
            let template = shlex::split(t).context("--template is not valid shell quoting")?;
            BackendSpec::CommandTemplate { template }
        }
    })
}

fn spec(args: &AnalyzeArgs) -> anyhow::Result<PackageSpec> {
    let ecosystem = match (&args.ecosystem, args.backend) {
        (Some(e), _) => e.clone(),
        // Replay takes the package identity from the bundle.
        (None, Backend::Replay) => String::new(),
        (None, _) => bail!("--ecosystem is required"),
    };
    Ok(PackageSpec {
        ecosystem,
        name: args.name.clone(),
        version: args.version.clone(),
        local_path: args.path.clone(),
    })
}

pub fn write_output(out: &Path, text: &str) -> anyhow::Result<()> {
    if out == Path::new("-") {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        stdout.flush()?;
    } else {
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

/// 3 when any alert fired, else 1 when a phase failed, else 0.
pub fn exit_code(report: &BehaviorReport) -> u8 {
    if !report.alerts.is_empty() {
        exit::ALERTS
    } else if report
        .pipeline_notes
        .iter()
        .any(|n| n.starts_with("pipeline error"))
    {
        exit::ERROR
    } else {
        exit::OK
    }
}

pub fn run(args: AnalyzeArgs) -> anyhow::Result<u8> {
    let rules = load_rules(args.common.rules.as_deref())?;
    let model = match &args.common.model {
        Some(p) => Some(load_model(p).with_context(|| format!("loading model {}", p.display()))?),
        None => None,
    };
    let spec = spec(&args)?;
    let scratch;
    let work_root = match &args.common.work_dir {
        Some(dir) => dir.clone(),
        None => {
            scratch = tempfile::Builder::new().prefix("pkgtrace-").tempdir()?;
            scratch.path().to_path_buf()
        }
    };
    let config = RunConfig {
        phase_timeout_s: args.common.timeout,
        backend: backend(&args)?,
        work_root,
        ..RunConfig::default()
    };
    let report = analyze(&spec, &config, &rules, model.as_ref())?;
    for note in &report.pipeline_notes {
        log::info!("{note}");
    }
    write_output(&args.common.out, &report.to_json())?;
    let phases = report
        .phases
        .keys()
        .map(|p| p.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    eprintln!(
        "{}: {} alert(s); phases: {}",
        report.package.name.as_deref().unwrap_or("<local>"),
        report.alerts.len(),
        if phases.is_empty() { "none" } else { &phases }
    );
    if let Some(s) = report.verdict.ml_score {
        eprintln!("ml score {s:.4}");
    }
    Ok(exit_code(&report))
}
