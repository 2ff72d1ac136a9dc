use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "scenario = 2\nseed = 7\nn_population = 3000\nreplications = 2\ng_max = 2\nclerical_m = 200\n";

fn linkerr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linkerr")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = linkerr(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    dir
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn unknown_key_fails_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "scneario = 1\n").unwrap();
    let out = linkerr(dir.path(), &["--config", "bad.toml", "simulate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scneario"));
}

#[test]
fn stage_commands_are_deterministic() {
    let dir = setup();
    let d = dir.path();
    for out in ["a", "b"] {
        for cmd in ["simulate", "link", "fit-uni", "fit-multi", "baselines"] {
            ok(d, &["--config", "run.toml", "--out", out, cmd]);
        }
    }
    for name in ["population.csv", "links_rule1.csv", "links_rule2.csv", "counts.csv", "linkage.json", "fit_uni.json", "fit_multi.json", "baselines.json"] {
        assert_eq!(read(&d.join("a"), name), read(&d.join("b"), name), "{name}");
    }
    let fit: serde_json::Value = serde_json::from_slice(&read(&d.join("a"), "fit_uni.json")).unwrap();
    assert!(fit["accuracy"]["p_bar"].as_f64().is_some());
}

#[test]
fn link_reproduces_links_from_a_dump() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "run.toml", "--out", "a", "simulate"]);
    ok(d, &["--config", "run.toml", "--out", "a", "link"]);
    fs::create_dir(d.join("b")).unwrap();
    fs::copy(d.join("a/population.csv"), d.join("moved.csv")).unwrap();
    ok(d, &["--config", "run.toml", "--out", "b", "--input", "moved.csv", "link"]);
    assert_eq!(read(&d.join("a"), "links_rule1.csv"), read(&d.join("b"), "links_rule1.csv"));
    assert_eq!(read(&d.join("a"), "links_rule2.csv"), read(&d.join("b"), "links_rule2.csv"));
}

#[test]
fn experiment_writes_reports_and_resumes() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "run.toml", "--out", "a", "experiment"]);
    let md = String::from_utf8(read(&d.join("a"), "metrics.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| UN ") || l.starts_with("| Naive ")).count(), 2);
    let csv = read(&d.join("a"), "metrics.csv");
    let jsonl = read(&d.join("a"), "replications.jsonl");
    assert_eq!(jsonl.iter().filter(|&&b| b == b'\n').count(), 2);

    // Drop the last record and rerun: the missing replication is recomputed.
    let text = String::from_utf8(jsonl.clone()).unwrap();
    fs::write(d.join("a/replications.jsonl"), text.lines().next().unwrap().to_string() + "\n").unwrap();
    ok(d, &["--config", "run.toml", "--out", "a", "experiment"]);
    assert_eq!(read(&d.join("a"), "replications.jsonl"), jsonl);
    assert_eq!(read(&d.join("a"), "metrics.csv"), csv);

    ok(d, &["--config", "run.toml", "--out", "b", "--threads", "1", "experiment"]);
    assert_eq!(read(&d.join("b"), "replications.jsonl"), jsonl);

    fs::remove_file(d.join("a/metrics.csv")).unwrap();
    ok(d, &["--config", "run.toml", "--out", "a", "report"]);
    assert_eq!(read(&d.join("a"), "metrics.csv"), csv);
}

#[test]
fn missing_input_is_a_labeled_failure() {
    let dir = setup();
    let out = linkerr(dir.path(), &["--config", "run.toml", "--out", "empty", "fit-uni"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit-uni"));
}
