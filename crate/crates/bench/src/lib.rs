//! Inputs shared by the benchmarks.

use std::path::PathBuf;

use pkgtrace_core::{analyze, BackendSpec, BehaviorReport, PackageSpec, RuleSet, RunConfig};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures"))
}

pub fn golden_trace() -> String {
    std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/fixtures/golden/golden.strace"
    ))
    .expect("golden trace present")
}

/// The golden corpus repeated until it is at least `lines` long.
pub fn large_trace(lines: usize) -> String {
    let golden = golden_trace();
    let per = golden.lines().count().max(1);
    golden.repeat(lines.div_ceil(per))
}

pub fn solana_report() -> BehaviorReport {
    let config = RunConfig {
        backend: BackendSpec::Replay {
            bundle_path: fixtures_dir().join("bundles/solana-style"),
        },
        ..RunConfig::default()
    };
    analyze(
        &PackageSpec::named("npm", "bench", None),
        &config,
        &RuleSet::default(),
        None,
    )
    .expect("fixture bundle loads")
}
