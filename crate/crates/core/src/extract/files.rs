use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Extracted, FileOp, FileRecord};
use crate::strace::{ArgValue, SyscallEvent};

/// How a syscall names its path arguments.
enum PathArgs {
    /// Path at this index, resolved against the cwd.
    Plain(usize),
    /// `(dirfd index, path index)`.
    At(usize, usize),
}

fn classify(e: &SyscallEvent) -> Option<(Vec<PathArgs>, BTreeSet<FileOp>)> {
    use FileOp::*;
    use PathArgs::*;
    let set = |ops: &[FileOp]| ops.iter().copied().collect::<BTreeSet<_>>();
    let (paths, ops) = match e.name.as_str() {
        "open" => (vec![Plain(0)], open_ops(e.arg(1))),
        "openat" => (vec![At(0, 1)], open_ops(e.arg(2))),
        "openat2" => (
            vec![At(0, 1)],
            open_ops(e.arg(2).and_then(|h| h.field("flags"))),
        ),
        "creat" => (vec![Plain(0)], set(&[Create, Write])),
        "truncate" => (vec![Plain(0)], set(&[Write])),
        "unlink" | "rmdir" => (vec![Plain(0)], set(&[Delete])),
        "unlinkat" => (vec![At(0, 1)], set(&[Delete])),
        "rename" => (vec![Plain(0), Plain(1)], set(&[Rename])),
        "renameat" | "renameat2" => (vec![At(0, 1), At(2, 3)], set(&[Rename])),
        "stat" | "lstat" | "stat64" | "lstat64" | "access" | "readlink" => {
            (vec![Plain(0)], set(&[Stat]))
        }
        "newfstatat" | "fstatat64" | "statx" | "faccessat" | "faccessat2" | "readlinkat" => {
            (vec![At(0, 1)], set(&[Stat]))
        }
        "mkdir" => (vec![Plain(0)], set(&[Create])),
        "mkdirat" => (vec![At(0, 1)], set(&[Create])),
        "execve" => (vec![Plain(0)], set(&[Execute])),
        "execveat" => (vec![At(0, 1)], set(&[Execute])),
        _ => return None,
    };
    Some((paths, ops))
}

fn open_ops(flags: Option<&ArgValue>) -> BTreeSet<FileOp> {
    let mut ops = BTreeSet::new();
    let has = |name: &str| flags.is_some_and(|f| f.has_flag(name));
    if has("O_WRONLY") || has("O_RDWR") {
        ops.insert(FileOp::Write);
    } else {
        ops.insert(FileOp::Read);
    }
    if has("O_CREAT") || has("O_TMPFILE") {
        ops.insert(FileOp::Create);
    }
    if has("O_TRUNC") {
        ops.insert(FileOp::Write);
    }
    ops
}

/// Per-pid working directory, learned from `chdir` and inherited across
/// `clone`/`fork`.
#[derive(Default)]
struct CwdTable {
    cwd: HashMap<u32, String>,
}

impl CwdTable {
    fn resolve(&self, pid: u32, path: &str) -> Option<String> {
        if path.starts_with('/') {
            return Some(path.to_string());
        }
        let base = self.cwd.get(&pid)?;
        Some(if base.ends_with('/') {
            format!("{base}{path}")
        } else {
            format!("{base}/{path}")
        })
    }

    fn observe(&mut self, e: &SyscallEvent) {
        match e.name.as_str() {
            "chdir" if e.ret.is_ok() => {
                let Some(path) = e.arg(0).and_then(ArgValue::as_bytes) else {
                    return;
                };
                let path = String::from_utf8_lossy(path);
                match self.resolve(e.pid, &path) {
                    Some(p) => self.cwd.insert(e.pid, p),
                    None => self.cwd.remove(&e.pid),
                };
            }
            "fchdir" if e.ret.is_ok() => {
                self.cwd.remove(&e.pid);
            }
            "clone" | "clone3" | "fork" | "vfork" => {
                let child = e
                    .ret
                    .value()
                    .filter(|c| *c > 0)
                    .and_then(|c| u32::try_from(c).ok());
                if let (Some(child), Some(cwd)) = (child, self.cwd.get(&e.pid).cloned()) {
                    self.cwd.insert(child, cwd);
                }
            }
            _ => {}
        }
    }
}

/// Every file access attempt, failed ones included, merged per path.
pub fn extract_files(events: &[SyscallEvent]) -> Extracted<FileRecord> {
    let mut cwd = CwdTable::default();
    let mut merged: BTreeMap<String, FileRecord> = BTreeMap::new();
    let mut notes = Vec::new();

    for e in events {
        cwd.observe(e);
        let Some((paths, ops)) = classify(e) else {
            continue;
        };
        for spec in paths {
            let (dirfd, index) = match spec {
                PathArgs::Plain(i) => (None, i),
                PathArgs::At(d, i) => (e.arg(d), i),
            };
            let Some(arg) = e.arg(index) else { continue };
            let Some(raw) = arg.as_bytes() else {
                notes.push(format!(
                    "seq {}: {} path argument is not a string",
                    e.seq, e.name
                ));
                continue;
            };
            let literal = String::from_utf8_lossy(raw).into_owned();
            if literal.is_empty() {
                // AT_EMPTY_PATH style calls operate on the descriptor itself.
                continue;
            }
            let relative_to_cwd = dirfd.is_none_or(|d| d.has_flag("AT_FDCWD"));
            let path = if literal.starts_with('/') {
                literal
            } else if relative_to_cwd {
                match cwd.resolve(e.pid, &literal) {
                    Some(p) => p,
                    None => {
                        notes.push(format!(
                            "seq {}: relative path {literal:?} with unknown cwd",
                            e.seq
                        ));
                        literal
                    }
                }
            } else {
                notes.push(format!(
                    "seq {}: path {literal:?} is relative to a directory descriptor",
                    e.seq
                ));
                literal
            };
            let record = merged.entry(path.clone()).or_insert_with(|| FileRecord {
                path,
                operations: BTreeSet::new(),
                pids: BTreeSet::new(),
            });
            record.operations.extend(ops.iter().copied());
            record.pids.insert(e.pid);
        }
    }
    Extracted {
        records: merged.into_values().collect(),
        notes,
    }
}
