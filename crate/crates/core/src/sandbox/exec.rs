//! Launching traced commands with a wall-clock budget.

use std::fs::{self, File};
use std::io;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{BackendSpec, RunConfig};

/// Outcome of one phase run, whatever the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseRun {
    pub trace: String,
    pub exit_status: Option<i32>,
    pub duration_ms: u64,
    pub timed_out: bool,
    pub notes: Vec<String>,
}

impl PhaseRun {
    pub fn succeeded(&self) -> bool {
        !self.timed_out && self.exit_status == Some(0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("empty command")]
    EmptyCommand,
    #[error("the replay backend does not launch commands")]
    ReplayBackend,
    #[error("command template has no {{CMD}} placeholder")]
    MissingCmdPlaceholder,
    #[error("failed to launch `{program}`: {source}")]
    Launch { program: String, source: io::Error },
    #[error("i/o error in {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

const POLL: Duration = Duration::from_millis(10);

/// Build the wrapper command line for a command template.
/// A word that is exactly `{CMD}` is replaced by the whole argv; `{CMD}`
/// inside a longer word becomes the shell-quoted command line.
pub fn expand_template(
    template: &[String],
    argv: &[String],
    workdir: &Path,
    trace_out: &Path,
) -> Result<Vec<String>, RunError> {
    if !template.iter().any(|w| w.contains("{CMD}")) {
        return Err(RunError::MissingCmdPlaceholder);
    }
    let joined =
        shlex::try_join(argv.iter().map(String::as_str)).unwrap_or_else(|_| argv.join(" "));
    let workdir = workdir.display().to_string();
    let trace_out = trace_out.display().to_string();
    let mut out = Vec::new();
    for word in template {
        if word == "{CMD}" {
            out.extend(argv.iter().cloned());
        } else {
            out.push(
                word.replace("{WORKDIR}", &workdir)
                    .replace("{TRACE_OUT}", &trace_out)
                    .replace("{CMD}", &joined),
            );
        }
    }
    Ok(out)
}

/// Command line for the given backend, writing the trace to `trace_out`.
pub fn backend_argv(
    argv: &[String],
    backend: &BackendSpec,
    config: &RunConfig,
    workdir: &Path,
    trace_out: &Path,
) -> Result<Vec<String>, RunError> {
    if argv.is_empty() {
        return Err(RunError::EmptyCommand);
    }
    match backend {
        BackendSpec::Replay { .. } => Err(RunError::ReplayBackend),
        BackendSpec::TracedSubprocess { strace_binary_path } => {
            let mut out = vec![strace_binary_path.display().to_string()];
            out.extend(config.trace_flags.iter().cloned());
            out.push("-o".into());
            out.push(trace_out.display().to_string());
            out.push("--".into());
            out.extend(argv.iter().cloned());
            Ok(out)
        }
        BackendSpec::CommandTemplate { template } => {
            expand_template(template, argv, workdir, trace_out)
        }
    }
}

/// Run `argv` under the backend with `config.phase_timeout_s` as budget.
/// On timeout the whole process group is killed and the partial trace is
/// returned.
pub fn run_phase(
    argv: &[String],
    backend: &BackendSpec,
    config: &RunConfig,
    workdir: &Path,
    trace_out: &Path,
) -> Result<PhaseRun, RunError> {
    let full = backend_argv(argv, backend, config, workdir, trace_out)?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(workdir).map_err(io_err(workdir))?;
    if let Some(parent) = trace_out.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    // A stale trace from an earlier run must not be mistaken for this one.
    let _ = fs::remove_file(trace_out);
    let log_path = trace_out.with_extension("output.log");
    let log = File::create(&log_path).map_err(io_err(&log_path))?;
    let log2 = log.try_clone().map_err(io_err(&log_path))?;

    let timeout = Duration::from_secs(config.phase_timeout_s.max(1));
    let started = Instant::now();
    let mut child = Command::new(&full[0])
        .args(&full[1..])
        .current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(log)
        .stderr(log2)
        .process_group(0)
        .spawn()
        .map_err(|source| RunError::Launch {
            program: full[0].clone(),
            source,
        })?;

    let (status, timed_out) = wait_with_deadline(&mut child, timeout).map_err(io_err(workdir))?;
    let duration_ms = started.elapsed().as_millis() as u64;

    let mut notes = Vec::new();
    let trace = match fs::read(trace_out) {
        Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
        Err(e) => {
            notes.push(format!("no trace produced at {}: {e}", trace_out.display()));
            String::new()
        }
    };
    if timed_out {
        notes.push(format!(
            "timed out after {}s; process group killed",
            timeout.as_secs()
        ));
    }
    let exit_status = status.and_then(|s| s.code().or_else(|| s.signal().map(|sig| 128 + sig)));
    Ok(PhaseRun {
        trace,
        exit_status,
        duration_ms,
        timed_out,
        notes,
    })
}

fn kill_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: kill(2) with a negative pid signals the process group we
    // created for this child; it has no memory-safety preconditions.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn wait_with_deadline(
    child: &mut Child,
    timeout: Duration,
) -> io::Result<(Option<ExitStatus>, bool)> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((Some(status), false));
        }
        if Instant::now() >= deadline {
            kill_group(child);
            let _ = child.kill();
            let status = child.wait().ok();
            return Ok((status, true));
        }
        thread::sleep(POLL);
    }
}
