//! The top-level analysis report and its JSON form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};

use crate::extract::PhaseReport;
use crate::rules::Alert;
use crate::sandbox::PackageSpec;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Install,
    Import,
    Execute,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Install, Phase::Import, Phase::Execute];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Install => "install",
            Phase::Import => "import",
            Phase::Execute => "execute",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown phase {0:?} (expected install, import or execute)")]
pub struct UnknownPhase(pub String);

impl FromStr for Phase {
    type Err = UnknownPhase;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPhase(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub ml_score: Option<f64>,
    pub label: Label,
}

impl Verdict {
    pub fn unknown() -> Self {
        Verdict {
            ml_score: None,
            label: Label::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub schema_version: String,
    pub package: PackageSpec,
    #[serde(deserialize_with = "phases_with_keys")]
    pub phases: BTreeMap<Phase, PhaseReport>,
    pub alerts: Vec<Alert>,
    pub verdict: Verdict,
    pub created_at: DateTime<Utc>,
    pub pipeline_notes: Vec<String>,
}

fn phases_with_keys<'de, D: Deserializer<'de>>(
    d: D,
) -> Result<BTreeMap<Phase, PhaseReport>, D::Error> {
    let mut phases = BTreeMap::<Phase, PhaseReport>::deserialize(d)?;
    for (phase, report) in phases.iter_mut() {
        report.phase = *phase;
    }
    Ok(phases)
}

impl BehaviorReport {
    pub fn new(package: PackageSpec) -> Self {
        BehaviorReport {
            schema_version: SCHEMA_VERSION.to_string(),
            package,
            phases: BTreeMap::new(),
            alerts: Vec::new(),
            verdict: Verdict::unknown(),
            created_at: Utc::now(),
            pipeline_notes: Vec::new(),
        }
    }

    /// Adds a phase, moving its extraction notes into the pipeline notes.
    pub fn insert_phase(&mut self, mut report: PhaseReport) {
        let phase = report.phase;
        for note in report.notes.drain(..) {
            self.pipeline_notes.push(format!("{phase}: {note}"));
        }
        self.phases.insert(phase, report);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}
