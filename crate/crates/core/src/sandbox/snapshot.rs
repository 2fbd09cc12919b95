use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Executable regular files under a root, keyed by path, valued by the
/// hex SHA-256 of their content.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutableSnapshot {
    pub files: BTreeMap<PathBuf, String>,
    pub notes: Vec<String>,
}

fn hash_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut f = fs::File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Regular files with any execute bit set. Symlinks are not followed.
pub fn snapshot_executables(root: &Path) -> ExecutableSnapshot {
    let mut snap = ExecutableSnapshot::default();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                snap.notes.push(format!("skipped unreadable entry: {e}"));
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let mode = match entry.metadata() {
            Ok(m) => m.permissions().mode(),
            Err(e) => {
                snap.notes
                    .push(format!("skipped {}: {e}", entry.path().display()));
                continue;
            }
        };
        if mode & 0o111 == 0 {
            continue;
        }
        match hash_file(entry.path()) {
            Ok(h) => {
                snap.files.insert(entry.path().to_path_buf(), h);
            }
            Err(e) => snap
                .notes
                .push(format!("skipped {}: {e}", entry.path().display())),
        }
    }
    snap
}

/// Paths new in `after`, plus paths whose content changed, sorted.
pub fn diff_new_executables(
    before: &ExecutableSnapshot,
    after: &ExecutableSnapshot,
) -> Vec<PathBuf> {
    after
        .files
        .iter()
        .filter(|(path, hash)| before.files.get(*path) != Some(*hash))
        .map(|(path, _)| path.clone())
        .collect()
}
