//! Per-process file-descriptor tracking for sockets, used to attribute
//! payloads and connections to remote endpoints.

use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};

use serde::{Deserialize, Serialize};

use crate::strace::{ArgValue, RetValue, SyscallEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
    Unknown,
}

/// Result of interpreting a `sockaddr` rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sockaddr {
    Inet(SocketAddr),
    Unix,
    Unspec,
    /// Families we do not track (netlink, packet, ...).
    Other(String),
    Malformed(String),
}

pub fn parse_sockaddr(value: &ArgValue) -> Sockaddr {
    let Some(family) = value.field("sa_family") else {
        return Sockaddr::Malformed("no sa_family member".into());
    };
    let family = match family {
        ArgValue::Flags { names } if names.len() == 1 => names[0].as_str(),
        _ => return Sockaddr::Malformed("sa_family is not a constant".into()),
    };
    match family {
        "AF_INET" => {
            let port = value.field("sin_port").and_then(htons_port);
            let addr = value
                .field("sin_addr")
                .and_then(|v| call_text(v, "inet_addr", 0))
                .and_then(|s| s.parse::<Ipv4Addr>().ok());
            match (addr, port) {
                (Some(a), Some(p)) => Sockaddr::Inet(SocketAddr::new(IpAddr::V4(a), p)),
                _ => Sockaddr::Malformed("AF_INET address or port not understood".into()),
            }
        }
        "AF_INET6" => {
            let port = value.field("sin6_port").and_then(htons_port);
            let addr = match value {
                ArgValue::Aggregate { fields } => fields
                    .iter()
                    .find_map(|(_, v)| call_text(v, "inet_pton", 1))
                    .and_then(|s| s.parse::<Ipv6Addr>().ok()),
                _ => None,
            };
            match (addr, port) {
                (Some(a), Some(p)) => Sockaddr::Inet(SocketAddr::new(IpAddr::V6(a), p)),
                _ => Sockaddr::Malformed("AF_INET6 address or port not understood".into()),
            }
        }
        "AF_UNIX" | "AF_LOCAL" => Sockaddr::Unix,
        "AF_UNSPEC" => Sockaddr::Unspec,
        other => Sockaddr::Other(other.to_string()),
    }
}

fn htons_port(v: &ArgValue) -> Option<u16> {
    match v {
        ArgValue::Call { name, args } if name == "htons" && args.len() == 1 => {
            args[0].as_i64().and_then(|n| u16::try_from(n).ok())
        }
        ArgValue::Number { value, .. } => u16::try_from(*value).ok(),
        _ => None,
    }
}

fn call_text(v: &ArgValue, func: &str, index: usize) -> Option<String> {
    match v {
        ArgValue::Call { name, args } if name == func => args
            .get(index)
            .and_then(ArgValue::as_bytes)
            .map(|b| String::from_utf8_lossy(b).into_owned()),
        _ => None,
    }
}

/// Where an event's traffic went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attribution {
    pub endpoint: SocketAddr,
    pub protocol: Protocol,
    /// The address came from the event's own sockaddr argument rather than
    /// from an earlier `connect`.
    pub explicit: bool,
}

/// One change to an fd binding, in stream order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingChange {
    pub seq: u64,
    pub pid: u32,
    pub fd: i64,
    pub endpoint: Option<SocketAddr>,
}

#[derive(Debug, Clone, Default)]
pub struct SocketTable {
    attributions: BTreeMap<u64, Attribution>,
    pub timeline: Vec<BindingChange>,
    pub notes: Vec<String>,
}

impl SocketTable {
    pub fn attribution(&self, seq: u64) -> Option<&Attribution> {
        self.attributions.get(&seq)
    }

    pub fn attributions(&self) -> impl Iterator<Item = (u64, &Attribution)> {
        self.attributions.iter().map(|(s, a)| (*s, a))
    }
}

#[derive(Debug, Clone)]
struct SocketState {
    protocol: Protocol,
    unix: bool,
    remote: Option<SocketAddr>,
}

/// Syscalls that hand back a fresh, non-socket descriptor.
const FD_CREATORS: &[&str] = &[
    "open",
    "openat",
    "openat2",
    "creat",
    "epoll_create",
    "epoll_create1",
    "eventfd",
    "eventfd2",
    "memfd_create",
    "signalfd",
    "signalfd4",
    "timerfd_create",
    "inotify_init",
    "inotify_init1",
    "pidfd_open",
    "userfaultfd",
];

/// Send-side syscalls whose payload may be attributed to an endpoint.
pub(crate) const PAYLOAD_CALLS: &[&str] = &["sendto", "send", "sendmsg", "write", "writev"];

#[derive(Default)]
struct Tracker {
    sockets: Vec<SocketState>,
    fds: HashMap<u32, HashMap<i64, usize>>,
    table: SocketTable,
}

impl Tracker {
    fn lookup(&self, pid: u32, fd: i64) -> Option<usize> {
        self.fds.get(&pid).and_then(|m| m.get(&fd)).copied()
    }

    fn bind(&mut self, seq: u64, pid: u32, fd: i64, id: Option<usize>) {
        let map = self.fds.entry(pid).or_default();
        let endpoint = match id {
            Some(id) => {
                map.insert(fd, id);
                self.sockets[id].remote
            }
            None => {
                if map.remove(&fd).is_none() {
                    return;
                }
                None
            }
        };
        self.table.timeline.push(BindingChange {
            seq,
            pid,
            fd,
            endpoint,
        });
    }

    fn new_socket(&mut self, protocol: Protocol, unix: bool) -> usize {
        self.sockets.push(SocketState {
            protocol,
            unix,
            remote: None,
        });
        self.sockets.len() - 1
    }

    fn attribute(&mut self, seq: u64, endpoint: SocketAddr, protocol: Protocol, explicit: bool) {
        self.table.attributions.insert(
            seq,
            Attribution {
                endpoint,
                protocol,
                explicit,
            },
        );
    }

    fn event(&mut self, e: &SyscallEvent) {
        let fd_arg = e.arg(0).and_then(ArgValue::as_i64);
        let ret = e.ret.value();
        match e.name.as_str() {
            "socket" => {
                let Some(fd) = ret else { return };
                let unix = e
                    .arg(0)
                    .is_some_and(|d| d.has_flag("AF_UNIX") || d.has_flag("AF_LOCAL"));
                let ty = e.arg(1);
                let protocol = if ty.is_some_and(|t| t.has_flag("SOCK_STREAM")) {
                    Protocol::Tcp
                } else if ty.is_some_and(|t| t.has_flag("SOCK_DGRAM")) {
                    Protocol::Udp
                } else {
                    Protocol::Unknown
                };
                let id = self.new_socket(protocol, unix);
                self.bind(e.seq, e.pid, fd, Some(id));
            }
            "connect" => {
                let Some(fd) = fd_arg else { return };
                let Some(addr) = e.arg(1) else { return };
                let id = match self.lookup(e.pid, fd) {
                    Some(id) => id,
                    None => self.new_socket(Protocol::Unknown, false),
                };
                match parse_sockaddr(addr) {
                    Sockaddr::Inet(sa) => {
                        self.sockets[id].remote = Some(sa);
                        let protocol = self.sockets[id].protocol;
                        self.attribute(e.seq, sa, protocol, true);
                    }
                    Sockaddr::Unix => self.sockets[id].unix = true,
                    Sockaddr::Unspec => self.sockets[id].remote = None,
                    Sockaddr::Other(_) => {}
                    Sockaddr::Malformed(why) => {
                        self.table
                            .notes
                            .push(format!("seq {}: connect: {why}", e.seq));
                    }
                }
                self.bind(e.seq, e.pid, fd, Some(id));
            }
            "accept" | "accept4" => {
                let (Some(listen_fd), Some(new_fd)) = (fd_arg, ret) else {
                    return;
                };
                let protocol = self
                    .lookup(e.pid, listen_fd)
                    .map_or(Protocol::Unknown, |id| self.sockets[id].protocol);
                let id = self.new_socket(protocol, false);
                if let Some(Sockaddr::Inet(sa)) = e.arg(1).map(parse_sockaddr) {
                    self.sockets[id].remote = Some(sa);
                }
                self.bind(e.seq, e.pid, new_fd, Some(id));
            }
            "dup" | "dup2" | "dup3" | "fcntl" | "fcntl64" => {
                let Some(old) = fd_arg else { return };
                if e.name.starts_with("fcntl")
                    && !e
                        .arg(1)
                        .is_some_and(|c| c.has_flag("F_DUPFD") || c.has_flag("F_DUPFD_CLOEXEC"))
                {
                    return;
                }
                let Some(new) = ret else { return };
                let id = self.lookup(e.pid, old);
                self.bind(e.seq, e.pid, new, id);
            }
            "close" => {
                if let Some(fd) = fd_arg {
                    self.bind(e.seq, e.pid, fd, None);
                }
            }
            "clone" | "clone3" | "fork" | "vfork" => {
                if let Some(child) = ret.filter(|c| *c > 0).and_then(|c| u32::try_from(c).ok()) {
                    let snapshot = self.fds.get(&e.pid).cloned().unwrap_or_default();
                    self.fds.insert(child, snapshot);
                }
            }
            name if FD_CREATORS.contains(&name) => {
                if let Some(fd) = ret {
                    self.bind(e.seq, e.pid, fd, None);
                }
            }
            name if PAYLOAD_CALLS.contains(&name) => self.payload(e, fd_arg),
            _ => {}
        }
    }

    fn payload(&mut self, e: &SyscallEvent, fd: Option<i64>) {
        let Some(fd) = fd else { return };
        let socket = self.lookup(e.pid, fd);
        let explicit_addr = match e.name.as_str() {
            "sendto" => e.arg(4),
            "sendmsg" => e.arg(1).and_then(|m| m.field("msg_name")),
            _ => None,
        }
        .filter(|a| matches!(a, ArgValue::Aggregate { .. }));
        if let Some(addr) = explicit_addr {
            match parse_sockaddr(addr) {
                Sockaddr::Inet(sa) => {
                    let protocol = socket.map_or(Protocol::Unknown, |id| self.sockets[id].protocol);
                    self.attribute(e.seq, sa, protocol, true);
                    return;
                }
                Sockaddr::Malformed(why) => {
                    self.table
                        .notes
                        .push(format!("seq {}: {}: {why}", e.seq, e.name));
                }
                _ => {}
            }
        }
        let socket_call = matches!(e.name.as_str(), "sendto" | "send" | "sendmsg");
        match socket.map(|id| &self.sockets[id]) {
            Some(SocketState {
                remote: Some(sa),
                protocol,
                ..
            }) => {
                let (sa, protocol) = (*sa, *protocol);
                self.attribute(e.seq, sa, protocol, false);
            }
            Some(SocketState { unix: true, .. }) => {}
            Some(_) if socket_call => {
                self.table
                    .notes
                    .push(format!("seq {}: {} on unconnected fd {fd}", e.seq, e.name));
            }
            None if socket_call => {
                self.table.notes.push(format!(
                    "seq {}: {} on unknown fd {fd}; payload unattributed",
                    e.seq, e.name
                ));
            }
            _ => {}
        }
    }
}

/// Walk the events once and record which endpoint each connect and
/// payload-bearing call refers to.
pub fn track_sockets(events: &[SyscallEvent]) -> SocketTable {
    let mut tracker = Tracker::default();
    for e in events {
        if matches!(e.ret, RetValue::Err { ref errno, .. } if errno == "EBADF") {
            continue;
        }
        tracker.event(e);
    }
    tracker.table
}
