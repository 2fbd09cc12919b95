//! Turns a parsed syscall stream into behavioral indicators for one phase.

mod dns;
mod files;
mod sockets;

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::report::Phase;
use crate::strace::{ArgValue, RetValue, SyscallEvent};

pub use dns::{decode_dns_queries, DnsError, DnsQuestion};
pub use files::extract_files;
pub use sockets::{
    parse_sockaddr, track_sockets, Attribution, BindingChange, Protocol, Sockaddr, SocketTable,
};

#[cfg(test)]
pub(crate) use dns::encode_query;

/// Default upper bound on the number of records kept per report section.
pub const DEFAULT_SECTION_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub program_path: String,
    pub argv: Vec<String>,
    pub pid: u32,
    pub succeeded: bool,
    #[serde(skip)]
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileOp {
    Read,
    Write,
    Create,
    Delete,
    Rename,
    Stat,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub operations: BTreeSet<FileOp>,
    pub pids: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEndpoint {
    pub address: IpAddr,
    pub port: u16,
    pub protocol: Protocol,
    #[serde(skip)]
    pub first_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub name: String,
    pub query_type: u16,
    #[serde(skip)]
    pub source_seq: u64,
}

/// Serialized as the bare name → count map; `total` is recomputed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, u64>", into = "BTreeMap<String, u64>")]
pub struct SyscallStats {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl From<BTreeMap<String, u64>> for SyscallStats {
    fn from(counts: BTreeMap<String, u64>) -> Self {
        let total = counts.values().sum();
        SyscallStats { counts, total }
    }
}

impl From<SyscallStats> for BTreeMap<String, u64> {
    fn from(s: SyscallStats) -> Self {
        s.counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// Implied by the key the report is stored under.
    #[serde(skip)]
    pub phase: Phase,
    pub commands: Vec<CommandRecord>,
    pub files: Vec<FileRecord>,
    #[serde(rename = "ips")]
    pub endpoints: Vec<NetworkEndpoint>,
    pub domains: Vec<DomainRecord>,
    pub syscalls: SyscallStats,
    pub duration_ms: u64,
    /// Extraction notes, including truncation. Surfaced through the
    /// report's pipeline notes rather than the phase object.
    #[serde(skip)]
    pub notes: Vec<String>,
}

impl PhaseReport {
    pub fn empty(phase: Phase, duration_ms: u64) -> Self {
        PhaseReport {
            phase,
            commands: Vec::new(),
            files: Vec::new(),
            endpoints: Vec::new(),
            domains: Vec::new(),
            syscalls: SyscallStats::default(),
            duration_ms,
            notes: Vec::new(),
        }
    }
}

/// Records from one extractor plus anything worth telling the analyst.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted<T> {
    pub records: Vec<T>,
    pub notes: Vec<String>,
}

/// Indicators dropped before a report is assembled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseFilter {
    /// Paths equal to or below these directories are dropped.
    pub file_dirs: Vec<String>,
    pub file_exact: Vec<String>,
    /// Records whose only operation is `execute` are dropped under these
    /// directories, so the shell and coreutils a command runs through do
    /// not show up as file accesses (the command itself is still recorded).
    pub exec_only_dirs: Vec<String>,
    /// Drop 127.0.0.0/8 and ::1 endpoints, except port 53.
    pub drop_loopback: bool,
}

impl Default for NoiseFilter {
    fn default() -> Self {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        NoiseFilter {
            file_dirs: owned(&["/proc", "/sys"]),
            file_exact: owned(&["/dev/null", "/etc/ld.so.cache"]),
            exec_only_dirs: owned(&["/bin", "/sbin", "/usr/bin", "/usr/sbin"]),
            drop_loopback: true,
        }
    }
}

impl NoiseFilter {
    /// Keep everything.
    pub fn none() -> Self {
        NoiseFilter {
            file_dirs: Vec::new(),
            file_exact: Vec::new(),
            exec_only_dirs: Vec::new(),
            drop_loopback: false,
        }
    }

    pub fn drops_file(&self, record: &FileRecord) -> bool {
        let under = |dirs: &[String]| {
            dirs.iter().any(|d| {
                let d = d.trim_end_matches('/');
                record.path == d
                    || record
                        .path
                        .strip_prefix(d)
                        .is_some_and(|rest| rest.starts_with('/'))
            })
        };
        if self.file_exact.contains(&record.path) || under(&self.file_dirs) {
            return true;
        }
        record.operations.iter().all(|op| *op == FileOp::Execute) && under(&self.exec_only_dirs)
    }

    pub fn drops_endpoint(&self, ep: &NetworkEndpoint) -> bool {
        self.drop_loopback && ep.address.is_loopback() && ep.port != 53
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    pub noise: NoiseFilter,
    pub section_cap: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            noise: NoiseFilter::default(),
            section_cap: DEFAULT_SECTION_CAP,
        }
    }
}

fn text_of(v: &ArgValue) -> Option<String> {
    v.as_bytes()
        .map(|b| String::from_utf8_lossy(b).into_owned())
}

/// One record per `execve`/`execveat` that succeeded or failed with ENOENT.
pub fn extract_commands(events: &[SyscallEvent]) -> Extracted<CommandRecord> {
    let mut records = Vec::new();
    let mut notes = Vec::new();
    for e in events {
        let (path_idx, argv_idx) = match e.name.as_str() {
            "execve" => (0, 1),
            "execveat" => (1, 2),
            _ => continue,
        };
        let succeeded = match &e.ret {
            RetValue::Ok { .. } => true,
            RetValue::Err { errno, .. } if errno == "ENOENT" => false,
            _ => continue,
        };
        let Some(program_path) = e.arg(path_idx).and_then(text_of) else {
            notes.push(format!("seq {}: {} without a string path", e.seq, e.name));
            continue;
        };
        let argv = match e.arg(argv_idx) {
            Some(ArgValue::List { items }) => {
                let argv: Vec<String> = items.iter().filter_map(text_of).collect();
                if argv.len() != items.len() {
                    notes.push(format!(
                        "seq {}: argv of {program_path} is abbreviated",
                        e.seq
                    ));
                }
                argv
            }
            _ => Vec::new(),
        };
        let argv = if argv.is_empty() {
            notes.push(format!(
                "seq {}: argv of {program_path} not available",
                e.seq
            ));
            vec![program_path.clone()]
        } else {
            argv
        };
        records.push(CommandRecord {
            program_path,
            argv,
            pid: e.pid,
            succeeded,
            seq: e.seq,
        });
    }
    Extracted { records, notes }
}

/// Distinct endpoints named by `connect`, `sendto` and `sendmsg` address
/// arguments. Failed and in-progress connects count as attempts.
pub fn extract_network(
    _events: &[SyscallEvent],
    table: &SocketTable,
) -> Extracted<NetworkEndpoint> {
    let mut seen: BTreeMap<(IpAddr, u16, Protocol), u64> = BTreeMap::new();
    for (seq, a) in table.attributions().filter(|(_, a)| a.explicit) {
        seen.entry((a.endpoint.ip(), a.endpoint.port(), a.protocol))
            .and_modify(|s| *s = (*s).min(seq))
            .or_insert(seq);
    }
    let records = seen
        .into_iter()
        .map(|((address, port, protocol), first_seq)| NetworkEndpoint {
            address,
            port,
            protocol,
            first_seq,
        })
        .collect();
    Extracted {
        records,
        notes: table.notes.clone(),
    }
}

/// Bytes an outgoing call carries, concatenating iovecs.
fn payload_bytes(e: &SyscallEvent) -> Option<Vec<u8>> {
    let iov = |v: &ArgValue| -> Option<Vec<u8>> {
        let ArgValue::List { items } = v else {
            return None;
        };
        let mut out = Vec::new();
        for item in items {
            out.extend_from_slice(item.field("iov_base")?.as_bytes()?);
        }
        Some(out)
    };
    match e.name.as_str() {
        "sendto" | "send" | "write" => e.arg(1)?.as_bytes().map(<[u8]>::to_vec),
        "writev" => iov(e.arg(1)?),
        "sendmsg" => iov(e.arg(1)?.field("msg_iov")?),
        _ => None,
    }
}

fn payload_truncated(e: &SyscallEvent) -> bool {
    fn any(v: &ArgValue) -> bool {
        match v {
            ArgValue::Text { truncated, .. } => *truncated,
            ArgValue::Aggregate { fields } => fields.iter().any(|(_, v)| any(v)),
            ArgValue::List { items } => items.iter().any(any),
            _ => false,
        }
    }
    e.args.iter().any(any)
}

/// Query names carried by payloads sent to port 53.
pub fn extract_domains(events: &[SyscallEvent], table: &SocketTable) -> Extracted<DomainRecord> {
    let mut seen: BTreeMap<(String, u16), u64> = BTreeMap::new();
    let mut notes = Vec::new();
    for e in events {
        let Some(a) = table.attribution(e.seq) else {
            continue;
        };
        if a.endpoint.port() != 53 || !sockets::PAYLOAD_CALLS.contains(&e.name.as_str()) {
            continue;
        }
        let Some(mut payload) = payload_bytes(e) else {
            notes.push(format!(
                "seq {}: {} payload to port 53 not readable",
                e.seq, e.name
            ));
            continue;
        };
        let framed = payload.len() >= 2
            && usize::from(u16::from_be_bytes([payload[0], payload[1]])) == payload.len() - 2;
        if a.protocol == Protocol::Tcp || (a.protocol == Protocol::Unknown && framed) {
            payload.drain(..payload.len().min(2));
        }
        match decode_dns_queries(&payload) {
            Ok(questions) => {
                for q in questions {
                    seen.entry((q.name, q.query_type))
                        .and_modify(|s| *s = (*s).min(e.seq))
                        .or_insert(e.seq);
                }
            }
            Err(err) => {
                let hint = if payload_truncated(e) {
                    " (payload truncated by the tracer)"
                } else {
                    ""
                };
                notes.push(format!(
                    "seq {}: DNS payload not decoded: {err}{hint}",
                    e.seq
                ));
            }
        }
    }
    let records = seen
        .into_iter()
        .map(|((name, query_type), source_seq)| DomainRecord {
            name,
            query_type,
            source_seq,
        })
        .collect();
    Extracted { records, notes }
}

/// Counts every event by name, failed calls included.
pub fn extract_syscall_stats(events: &[SyscallEvent]) -> SyscallStats {
    let mut counts = BTreeMap::new();
    for e in events {
        *counts.entry(e.name.clone()).or_insert(0u64) += 1;
    }
    SyscallStats::from(counts)
}

fn cap<T>(section: &str, records: &mut Vec<T>, limit: usize, notes: &mut Vec<String>) {
    if records.len() > limit {
        notes.push(format!(
            "{section} truncated to {limit} of {} records",
            records.len()
        ));
        records.truncate(limit);
    }
}

pub fn build_phase_report(phase: Phase, events: &[SyscallEvent], duration_ms: u64) -> PhaseReport {
    build_phase_report_with(phase, events, duration_ms, &ExtractOptions::default())
}

pub fn build_phase_report_with(
    phase: Phase,
    events: &[SyscallEvent],
    duration_ms: u64,
    options: &ExtractOptions,
) -> PhaseReport {
    let table = track_sockets(events);
    let commands = extract_commands(events);
    let files = extract_files(events);
    let network = extract_network(events, &table);
    let domains = extract_domains(events, &table);

    let mut notes = Vec::new();
    let mut commands_r = commands.records;
    commands_r.sort_by_key(|c| c.seq);
    let mut files_r: Vec<_> = files
        .records
        .into_iter()
        .filter(|f| !options.noise.drops_file(f))
        .collect();
    files_r.sort_by(|a, b| a.path.cmp(&b.path));
    let mut endpoints: Vec<_> = network
        .records
        .into_iter()
        .filter(|ep| !options.noise.drops_endpoint(ep))
        .collect();
    endpoints.sort_by_key(|e| (e.address, e.port, e.protocol));
    let mut domains_r = domains.records;
    domains_r.sort_by(|a, b| (&a.name, a.query_type).cmp(&(&b.name, b.query_type)));

    for n in [commands.notes, files.notes, network.notes, domains.notes] {
        notes.extend(n);
    }
    cap("commands", &mut commands_r, options.section_cap, &mut notes);
    cap("files", &mut files_r, options.section_cap, &mut notes);
    cap("ips", &mut endpoints, options.section_cap, &mut notes);
    cap("domains", &mut domains_r, options.section_cap, &mut notes);

    PhaseReport {
        phase,
        commands: commands_r,
        files: files_r,
        endpoints,
        domains: domains_r,
        syscalls: extract_syscall_stats(events),
        duration_ms,
        notes,
    }
}
