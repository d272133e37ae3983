use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use objledger_sim::trace::{Trace, TraceEvent};

fn objledger(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objledger"))
        .args(args)
        .env_remove("OBJLEDGER_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_into(scenario: &str, dir: &Path) -> Output {
    objledger(&["run-scenario", "--scenario", scenario, "--out", dir.to_str().unwrap()])
}

#[test]
fn happy_owned_passes_with_two_round_trip_finality() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("happy-owned", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("two-wave finality: 40 of 40"), "{text}");
    assert!(text.contains("result: pass"));
    for file in ["trace.ndjson", "metrics.json", "report.txt"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["settled"], 40.0);
}

#[test]
fn equivocation_reports_deferred_liveness() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("equivocation", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out)
        .contains("no conflicting certificate formed; liveness deferred to next epoch"));
}

#[test]
fn every_bundled_scenario_passes() {
    let listed = stdout(&objledger(&["scenarios"]));
    let names: Vec<&str> = listed.lines().collect();
    assert!(names.len() >= 6);
    for name in names {
        let dir = tempfile::tempdir().unwrap();
        let out = run_into(name, dir.path());
        assert_eq!(out.status.code(), Some(0), "{name}:\n{}", stdout(&out));
    }
}

#[test]
fn output_is_deterministic_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = objledger(&[
            "run-scenario",
            "--scenario",
            "shared-counter",
            "--seed",
            "42",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["trace.ndjson", "metrics.json", "report.txt"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn output_dir_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_objledger"))
        .args(["run-scenario", "--scenario", "happy-owned"])
        .env("OBJLEDGER_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("trace.ndjson").exists());
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"x\"\n[network]\ndrop_probability = 2.0\n").unwrap();
    let out = run_into(bad.to_str().unwrap(), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drop_probability"));

    fs::write(&bad, "name = \"x\"\nbogus = 1\n").unwrap();
    assert_eq!(run_into(bad.to_str().unwrap(), dir.path()).status.code(), Some(2));
    assert_eq!(run_into("no-such-scenario", dir.path()).status.code(), Some(2));
    assert_eq!(objledger(&["run-scenario"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    fs::write(&file, "").unwrap();
    let out = run_into("happy-owned", &file);
    assert_eq!(out.status.code(), Some(2));
}

fn stored_trace(dir: &Path) -> Trace {
    assert_eq!(run_into("happy-owned", dir).status.code(), Some(0));
    let file = fs::File::open(dir.join("trace.ndjson")).unwrap();
    Trace::read_from(BufReader::new(file)).unwrap()
}

#[test]
fn verify_trace_passes_a_stored_trace() {
    let dir = tempfile::tempdir().unwrap();
    stored_trace(dir.path());
    let path = dir.path().join("trace.ndjson");
    let out = objledger(&["verify-trace", "--trace", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS bcb_consistency"));
}

#[test]
fn verify_trace_catches_an_injected_conflicting_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let mut trace = stored_trace(dir.path());
    let i = trace
        .events
        .iter()
        .position(|e| matches!(e, TraceEvent::CertFormed { .. }))
        .unwrap();
    let mut forged = trace.events[i].clone();
    // Same object key and epoch, different transaction.
    if let TraceEvent::CertFormed { tx, .. } = &mut forged {
        tx.0 .0[0] ^= 0xff;
    }
    trace.events.insert(i + 1, forged);
    trace.footer.events += 1;
    let path = dir.path().join("forged.ndjson");
    fs::write(&path, trace.to_ndjson()).unwrap();

    let out = objledger(&["verify-trace", "--trace", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL bcb_consistency"), "{text}");
    assert!(text.contains("FAIL (safety violation)"));
}

#[test]
fn verify_trace_rejects_a_truncated_trace() {
    let dir = tempfile::tempdir().unwrap();
    stored_trace(dir.path());
    let text = fs::read_to_string(dir.path().join("trace.ndjson")).unwrap();
    let cut: Vec<&str> = text.lines().collect();
    let path = dir.path().join("cut.ndjson");
    fs::write(&path, cut[..cut.len() - 1].join("\n")).unwrap();
    let out = objledger(&["verify-trace", "--trace", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt trace"));
}

#[test]
fn bench_sweeps_loads() {
    let out = objledger(&["bench", "--scenario", "happy-owned", "--loads", "0,2,8"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| l.trim_start().starts_with(char::is_numeric))
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(rows.len(), 3);
    // Zero load: no certificates, but checkpoints keep coming.
    assert_eq!(rows[0][1], "0");
    assert!(rows[0][9].parse::<f64>().unwrap() > 0.0);
    assert_eq!(rows[2][2], "80");
}

#[test]
fn bench_ptb_ops_are_a_hundred_per_certificate() {
    let out = objledger(&["bench", "--scenario", "ptb-100", "--loads", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let row: Vec<f64> = text
        .lines()
        .find(|l| l.trim_start().starts_with('2'))
        .unwrap()
        .split_whitespace()
        .take(5)
        .map(|x| x.parse().unwrap())
        .collect();
    // Rates are printed to two decimals.
    assert!((row[4] / row[3] - 100.0).abs() < 0.05, "{text}");
}
