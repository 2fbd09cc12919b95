//! Labelled training data on disk: a directory with `benign/` and
//! `malicious/` subdirectories. Each entry is a report (`*.json`), a raw
//! trace (`*.strace`, read as an install phase) or a replay bundle (a
//! directory holding `manifest.json`, or a `*.tar.gz`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::extract::build_phase_report;
use crate::report::{BehaviorReport, Phase};
use crate::rules::RuleSet;
use crate::sandbox::{analyze, BackendSpec, PackageSpec, RunConfig, MANIFEST};
use crate::strace::parse_str;

pub const LABEL_DIRS: [(&str, bool); 2] = [("benign", false), ("malicious", true)];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Entry { path: PathBuf, message: String },
    #[error("{0} has neither a benign/ nor a malicious/ subdirectory")]
    NoLabels(PathBuf),
}

/// Examples in a fixed order: benign first, then malicious, each sorted by
/// file name.
pub fn load_labelled_dir(root: &Path) -> Result<Vec<(BehaviorReport, bool)>, DatasetError> {
    let mut out = Vec::new();
    let mut any_label = false;
    for (dir, label) in LABEL_DIRS {
        let dir = root.join(dir);
        if !dir.is_dir() {
            continue;
        }
        any_label = true;
        let io = |source| DatasetError::Io {
            path: dir.clone(),
            source,
        };
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort();
        for path in entries {
            if let Some(report) = load_entry(&path)? {
                out.push((report, label));
            }
        }
    }
    if !any_label {
        return Err(DatasetError::NoLabels(root.to_path_buf()));
    }
    Ok(out)
}

fn load_entry(path: &Path) -> Result<Option<BehaviorReport>, DatasetError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let entry_err = |message: String| DatasetError::Entry {
        path: path.to_path_buf(),
        message,
    };
    let read = || {
        fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    if name.starts_with('.') {
        return Ok(None);
    }
    if path.is_dir() && path.join(MANIFEST).is_file()
        || name.ends_with(".tar.gz")
        || name.ends_with(".tgz")
    {
        let config = RunConfig {
            backend: BackendSpec::Replay {
                bundle_path: path.to_path_buf(),
            },
            ..RunConfig::default()
        };
        let placeholder = PackageSpec::named("replay", &name, None);
        return analyze(&placeholder, &config, &RuleSet::default(), None)
            .map(Some)
            .map_err(|e| entry_err(e.to_string()));
    }
    if name.ends_with(".json") {
        return BehaviorReport::from_json(&read()?)
            .map(Some)
            .map_err(|e| entry_err(e.to_string()));
    }
    if name.ends_with(".strace") {
        let trace = parse_str(&read()?, None);
        let mut report = BehaviorReport::new(PackageSpec::named("trace", &name, None));
        report.insert_phase(build_phase_report(Phase::Install, &trace.events, 0));
        return Ok(Some(report));
    }
    Ok(None)
}
