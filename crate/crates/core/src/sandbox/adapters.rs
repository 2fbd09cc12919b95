use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PackageSpec, SpecError};
use crate::report::Phase;

/// What the execute phase runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecuteStep {
    /// Resolved after install from the executables the install created.
    Dynamic,
    /// A fixed command template.
    Fixed(Vec<String>),
}

/// Command templates for one ecosystem. Placeholders:
/// `{TARGET}` (local path, or name plus the version suffix), `{NAME}`,
/// `{MODULE}` (name with `-` replaced by `_`), `{VERSION}`, `{PATH}`,
/// `{FILE}` (file name of the local path) and `{WORKDIR}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adapter {
    pub install: Vec<String>,
    #[serde(default)]
    pub import: Option<Vec<String>>,
    pub execute: ExecuteStep,
    /// Joins name and version in `{TARGET}`; `None` ignores the version.
    #[serde(default)]
    pub version_separator: Option<String>,
    /// The sample must be supplied as a local file.
    #[serde(default)]
    pub requires_local_path: bool,
}

fn words(s: &str) -> Vec<String> {
    shlex::split(s).expect("adapter templates are valid shell words")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRegistry {
    pub adapters: BTreeMap<String, Adapter>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl AdapterRegistry {
    pub fn builtin() -> Self {
        let lib = |install: &str, import: &str, sep: &str| Adapter {
            install: words(install),
            import: Some(words(import)),
            execute: ExecuteStep::Dynamic,
            version_separator: Some(sep.to_string()),
            requires_local_path: false,
        };
        let bin = |install: &str, sep: Option<&str>, local: bool| Adapter {
            install: words(install),
            import: None,
            execute: ExecuteStep::Dynamic,
            version_separator: sep.map(str::to_string),
            requires_local_path: local,
        };
        let mut adapters = BTreeMap::new();
        adapters.insert(
            "pypi".into(),
            lib(
                "python3 -m pip install --no-input --prefix {WORKDIR}/prefix {TARGET}",
                "python3 -c 'import {MODULE}'",
                "==",
            ),
        );
        adapters.insert(
            "npm".into(),
            lib(
                "npm install --no-audit --no-fund --prefix {WORKDIR} {TARGET}",
                "node -e 'require(\"{NAME}\")'",
                "@",
            ),
        );
        adapters.insert(
            "rubygems".into(),
            lib(
                "gem install --install-dir {WORKDIR}/gems {TARGET}",
                "ruby -e 'require \"{NAME}\"'",
                ":",
            ),
        );
        adapters.insert(
            "packagist".into(),
            lib(
                "composer require --working-dir={WORKDIR} {TARGET}",
                "php -r 'require \"{WORKDIR}/vendor/autoload.php\";'",
                ":",
            ),
        );
        adapters.insert(
            "apk".into(),
            bin("apk add --allow-untrusted {TARGET}", Some("="), false),
        );
        adapters.insert(
            "maven".into(),
            bin(
                "mvn -q dependency:copy -Dartifact={TARGET} -DoutputDirectory={WORKDIR}",
                Some(":"),
                false,
            ),
        );
        adapters.insert(
            "archive".into(),
            bin("tar -xf {PATH} -C {WORKDIR}", None, true),
        );
        adapters.insert(
            "script".into(),
            Adapter {
                install: words("cp {PATH} {WORKDIR}/{FILE}"),
                import: None,
                execute: ExecuteStep::Fixed(words("sh {WORKDIR}/{FILE}")),
                version_separator: None,
                requires_local_path: true,
            },
        );
        AdapterRegistry { adapters }
    }

    pub fn get(&self, ecosystem: &str) -> Option<&Adapter> {
        self.adapters.get(ecosystem)
    }

    pub fn names(&self) -> Vec<String> {
        self.adapters.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannedCommand {
    Fixed(Vec<String>),
    /// Run every executable the install created, one after another.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhasePlan {
    pub steps: Vec<(Phase, PlannedCommand)>,
}

impl PhasePlan {
    pub fn get(&self, phase: Phase) -> Option<&PlannedCommand> {
        self.steps.iter().find(|(p, _)| *p == phase).map(|(_, c)| c)
    }
}

fn substitute(template: &[String], vars: &[(&str, String)]) -> Vec<String> {
    template
        .iter()
        .map(|word| vars.iter().fold(word.clone(), |w, (k, v)| w.replace(k, v)))
        .collect()
}

/// Expand the adapter templates for `spec`, with `workdir` as the
/// package's private working directory.
pub fn plan_phases(
    spec: &PackageSpec,
    registry: &AdapterRegistry,
    workdir: &Path,
) -> Result<PhasePlan, SpecError> {
    let adapter = registry
        .get(&spec.ecosystem)
        .ok_or_else(|| SpecError::UnknownEcosystem {
            ecosystem: spec.ecosystem.clone(),
            known: registry.names(),
        })?;
    spec.validate(adapter.requires_local_path)?;

    let name = spec.name.clone().unwrap_or_default();
    let path = spec
        .local_path
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let file = spec
        .local_path
        .as_ref()
        .and_then(|p| p.file_name())
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let target = if !path.is_empty() {
        path.clone()
    } else {
        match (&adapter.version_separator, &spec.version) {
            (Some(sep), Some(v)) => format!("{name}{sep}{v}"),
            _ => name.clone(),
        }
    };
    let vars = [
        ("{TARGET}", target),
        ("{MODULE}", name.replace('-', "_")),
        ("{NAME}", name),
        ("{VERSION}", spec.version.clone().unwrap_or_default()),
        ("{PATH}", path),
        ("{FILE}", file),
        ("{WORKDIR}", workdir.display().to_string()),
    ];

    let mut steps = vec![(
        Phase::Install,
        PlannedCommand::Fixed(substitute(&adapter.install, &vars)),
    )];
    if let Some(import) = &adapter.import {
        steps.push((
            Phase::Import,
            PlannedCommand::Fixed(substitute(import, &vars)),
        ));
    }
    steps.push((
        Phase::Execute,
        match &adapter.execute {
            ExecuteStep::Dynamic => PlannedCommand::Dynamic,
            ExecuteStep::Fixed(t) => PlannedCommand::Fixed(substitute(t, &vars)),
        },
    ));
    Ok(PhasePlan { steps })
}
