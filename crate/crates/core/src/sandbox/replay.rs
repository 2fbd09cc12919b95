//! Recorded runs: a manifest plus one strace log per phase, stored as a
//! directory or a `.tar.gz`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Component, Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::exec::PhaseRun;
use crate::report::Phase;

pub const MANIFEST: &str = "manifest.json";
/// Bundles larger than this (uncompressed) are refused.
pub const MAX_BUNDLE_BYTES: u64 = 256 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestPackage {
    pub ecosystem: String,
    pub name: String,
    #[serde(default)]
    pub version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestPhase {
    pub phase: Phase,
    pub trace_file: String,
    pub exit_status: i32,
    pub duration_ms: u64,
    #[serde(default)]
    pub new_executables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub package: ManifestPackage,
    pub phases: Vec<ManifestPhase>,
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("bundle {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bundle has no {MANIFEST}")]
    MissingManifest,
    #[error("malformed {MANIFEST}: {0}")]
    Manifest(String),
    #[error("trace file {0:?} named in the manifest is missing from the bundle")]
    MissingTrace(String),
    #[error("bundle exceeds {MAX_BUNDLE_BYTES} bytes")]
    TooLarge,
    #[error("unsafe entry path {0:?} in bundle")]
    UnsafePath(String),
}

/// A bundle read fully into memory.
#[derive(Debug, Clone)]
pub struct ReplayBundle {
    pub manifest: Manifest,
    files: BTreeMap<String, Vec<u8>>,
}

fn normalize(rel: &Path) -> Result<String, BundleError> {
    let mut parts = Vec::new();
    for c in rel.components() {
        match c {
            Component::Normal(p) => parts.push(p.to_string_lossy().into_owned()),
            Component::CurDir => {}
            _ => return Err(BundleError::UnsafePath(rel.display().to_string())),
        }
    }
    Ok(parts.join("/"))
}

impl ReplayBundle {
    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let io_err = |source| BundleError::Io {
            path: path.to_path_buf(),
            source,
        };
        let meta = fs::metadata(path).map_err(io_err)?;
        let files = if meta.is_dir() {
            read_dir(path)?
        } else {
            read_tar_gz(path)?
        };
        Self::from_files(files)
    }

    pub fn from_files(mut files: BTreeMap<String, Vec<u8>>) -> Result<Self, BundleError> {
        // Archives often wrap everything in one top-level directory.
        if !files.contains_key(MANIFEST) {
            let nested: Vec<_> = files
                .keys()
                .filter(|k| k.ends_with(&format!("/{MANIFEST}")))
                .cloned()
                .collect();
            if let [only] = nested.as_slice() {
                let prefix = only.trim_end_matches(MANIFEST).to_string();
                files = files
                    .into_iter()
                    .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|k| (k.to_string(), v)))
                    .collect();
            }
        }
        let raw = files.get(MANIFEST).ok_or(BundleError::MissingManifest)?;
        let manifest: Manifest =
            serde_json::from_slice(raw).map_err(|e| BundleError::Manifest(e.to_string()))?;
        validate(&manifest)?;
        for p in &manifest.phases {
            let key = normalize(Path::new(&p.trace_file))?;
            if !files.contains_key(&key) {
                return Err(BundleError::MissingTrace(p.trace_file.clone()));
            }
        }
        Ok(ReplayBundle { manifest, files })
    }

    pub fn phase(&self, phase: Phase) -> Option<&ManifestPhase> {
        self.manifest.phases.iter().find(|p| p.phase == phase)
    }

    /// The recorded run for `phase`, trace returned verbatim.
    pub fn phase_run(&self, phase: Phase) -> Option<PhaseRun> {
        let p = self.phase(phase)?;
        let key = normalize(Path::new(&p.trace_file)).ok()?;
        let bytes = self.files.get(&key)?;
        Some(PhaseRun {
            trace: String::from_utf8_lossy(bytes).into_owned(),
            exit_status: Some(p.exit_status),
            duration_ms: p.duration_ms,
            timed_out: false,
            notes: Vec::new(),
        })
    }

    /// Raw bytes of a file inside the bundle.
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }
}

fn validate(m: &Manifest) -> Result<(), BundleError> {
    if m.schema_version != "1.0" {
        return Err(BundleError::Manifest(format!(
            "unsupported schema_version {:?}",
            m.schema_version
        )));
    }
    if m.package.ecosystem.is_empty() || m.package.name.is_empty() {
        return Err(BundleError::Manifest(
            "package.ecosystem and package.name must be non-empty".into(),
        ));
    }
    if m.phases.first().map(|p| p.phase) != Some(Phase::Install) {
        return Err(BundleError::Manifest(
            "the first phase must be install".into(),
        ));
    }
    if m.phases.windows(2).any(|w| w[0].phase >= w[1].phase) {
        return Err(BundleError::Manifest(
            "phases must be unique and ordered install, import, execute".into(),
        ));
    }
    Ok(())
}

fn read_dir(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, BundleError> {
    let mut files = BTreeMap::new();
    let mut total = 0u64;
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| BundleError::Io {
            path: root.to_path_buf(),
            source: e
                .into_io_error()
                .unwrap_or_else(|| io::Error::other("directory walk failed")),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        total += entry.metadata().map(|m| m.len()).unwrap_or(0);
        if total > MAX_BUNDLE_BYTES {
            return Err(BundleError::TooLarge);
        }
        let bytes = fs::read(entry.path()).map_err(|source| BundleError::Io {
            path: entry.path().to_path_buf(),
            source,
        })?;
        files.insert(normalize(rel)?, bytes);
    }
    Ok(files)
}

fn read_tar_gz(path: &Path) -> Result<BTreeMap<String, Vec<u8>>, BundleError> {
    let io_err = |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut archive = tar::Archive::new(GzDecoder::new(file));
    let mut files = BTreeMap::new();
    let mut total = 0u64;
    for entry in archive.entries().map_err(io_err)? {
        let mut entry = entry.map_err(io_err)?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let rel = entry.path().map_err(io_err)?.into_owned();
        let key = normalize(&rel)?;
        let mut bytes = Vec::new();
        let budget = MAX_BUNDLE_BYTES - total + 1;
        (&mut entry)
            .take(budget)
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        total += bytes.len() as u64;
        if total > MAX_BUNDLE_BYTES {
            return Err(BundleError::TooLarge);
        }
        files.insert(key, bytes);
    }
    Ok(files)
}
