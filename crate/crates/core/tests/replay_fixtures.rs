mod common;

use std::collections::BTreeSet;
use std::path::Path;

use pkgtrace_core::rules::Category;
use pkgtrace_core::sandbox::AnalyzeError;
use pkgtrace_core::sandbox::BundleError;
use pkgtrace_core::{analyze, BackendSpec, BehaviorReport, PackageSpec, Phase, RuleSet, RunConfig};

fn replay(bundle: &Path) -> Result<BehaviorReport, AnalyzeError> {
    let config = RunConfig {
        backend: BackendSpec::Replay {
            bundle_path: bundle.to_path_buf(),
        },
        ..RunConfig::default()
    };
    analyze(
        &PackageSpec::named("npm", "ignored", None),
        &config,
        &RuleSet::default_rules(),
        None,
    )
}

fn without_timestamp(r: &BehaviorReport) -> String {
    let mut v = serde_json::to_value(r).unwrap();
    v.as_object_mut().unwrap().remove("created_at");
    serde_json::to_string_pretty(&v).unwrap()
}

#[test]
fn solana_style_raises_file_command_and_network_alerts() {
    let r = replay(&common::bundle("solana-style")).unwrap();
    assert_eq!(r.package.name.as_deref(), Some("solana-web3-sample"));
    assert!(r.alerts.len() >= 3);
    let cats: BTreeSet<_> = r.alerts.iter().map(|a| a.category).collect();
    assert!(cats.contains(&Category::File) && cats.contains(&Category::Command));
    assert!(cats.contains(&Category::Domain) || cats.contains(&Category::Ip));
    let ids: BTreeSet<_> = r.alerts.iter().map(|a| a.rule_id.as_str()).collect();
    for id in [
        "ssh_private_key",
        "system_account_db",
        "exfil_upload",
        "suspicious_port",
    ] {
        assert!(ids.contains(id), "missing {id}: {ids:?}");
    }
    assert!(r.pipeline_notes.is_empty(), "{:?}", r.pipeline_notes);

    let exec = &r.phases[&Phase::Execute];
    assert!(exec
        .domains
        .iter()
        .any(|d| d.name == "wallet-sync.attacker.example"));
    assert!(exec
        .endpoints
        .iter()
        .any(|e| format!("{}:{}", e.address, e.port) == "198.51.100.23:4444"));
}

#[test]
fn empty_bundle_gives_empty_sections() {
    let r = replay(&common::bundle("empty")).unwrap();
    assert_eq!(r.phases.len(), 3);
    for p in r.phases.values() {
        assert!(
            p.commands.is_empty()
                && p.files.is_empty()
                && p.endpoints.is_empty()
                && p.domains.is_empty()
        );
        assert_eq!(p.syscalls.total, 0);
    }
    assert!(r.alerts.is_empty());
}

#[test]
fn replay_is_deterministic_apart_from_created_at() {
    for name in ["solana-style", "empty"] {
        let a = replay(&common::bundle(name)).unwrap();
        let b = replay(&common::bundle(name)).unwrap();
        assert_eq!(without_timestamp(&a), without_timestamp(&b));
    }
}

#[test]
fn report_json_round_trips() {
    let r = replay(&common::bundle("solana-style")).unwrap();
    let back = BehaviorReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back.to_json(), r.to_json());
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
    let mut want = [
        "schema_version",
        "package",
        "phases",
        "alerts",
        "verdict",
        "created_at",
        "pipeline_notes",
    ];
    want.sort();
    let mut keys = keys;
    keys.sort();
    assert_eq!(keys, want);
    let phase_keys: BTreeSet<_> = v["phases"]["install"]
        .as_object()
        .unwrap()
        .keys()
        .cloned()
        .collect();
    assert_eq!(
        phase_keys,
        [
            "commands",
            "files",
            "ips",
            "domains",
            "syscalls",
            "duration_ms"
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    );
}

#[test]
fn tarball_and_directory_agree() {
    let dir = tempfile::tempdir().unwrap();
    let tgz = dir.path().join("bundle.tar.gz");
    let file = std::fs::File::create(&tgz).unwrap();
    let mut tar = tar::Builder::new(flate2::write::GzEncoder::new(
        file,
        flate2::Compression::default(),
    ));
    tar.append_dir_all("solana-style", common::bundle("solana-style"))
        .unwrap();
    tar.into_inner().unwrap().finish().unwrap();
    assert_eq!(
        without_timestamp(&replay(&tgz).unwrap()),
        without_timestamp(&replay(&common::bundle("solana-style")).unwrap())
    );
}

#[test]
fn malformed_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        "{\"schema_version\": \"1.0\"",
    )
    .unwrap();
    assert!(matches!(
        replay(dir.path()),
        Err(AnalyzeError::Bundle(BundleError::Manifest(_)))
    ));
    assert!(matches!(
        replay(&dir.path().join("nope")),
        Err(AnalyzeError::Bundle(BundleError::Io { .. }))
    ));
}

#[test]
fn failed_install_skips_later_phases() {
    let dir = tempfile::tempdir().unwrap();
    let src = common::bundle("solana-style");
    for f in ["install.strace", "import.strace", "execute.strace"] {
        std::fs::copy(src.join(f), dir.path().join(f)).unwrap();
    }
    let manifest = std::fs::read_to_string(src.join("manifest.json")).unwrap();
    let broken = manifest.replacen("\"exit_status\": 0", "\"exit_status\": 1", 1);
    std::fs::write(dir.path().join("manifest.json"), broken).unwrap();
    let r = replay(dir.path()).unwrap();
    assert_eq!(
        r.phases.keys().copied().collect::<Vec<_>>(),
        vec![Phase::Install]
    );
    assert!(r
        .pipeline_notes
        .iter()
        .any(|n| n.contains("pipeline error")));
}
