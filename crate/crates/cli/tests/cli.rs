use std::fs;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_streamann"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn streamann")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small(out: &Path, extra: &[&str]) -> Vec<String> {
    let mut a: Vec<String> = [
        "--synthetic",
        "600,8,4,3",
        "--queries",
        "30",
        "--R",
        "12",
        "--Lc",
        "24",
        "--Ls",
        "10,20",
        "--B",
        "4",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    a.push(out.display().to_string());
    a.extend(extra.iter().map(|s| s.to_string()));
    a
}

fn with(cmd: &str, rest: &[String]) -> Vec<String> {
    let mut v = vec![cmd.to_string()];
    v.extend_from_slice(rest);
    v
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn build_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one");
    ok(&[
        "build",
        "--synthetic",
        "1,4,1,1",
        "--queries",
        "3",
        "--Ls",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["sweep"][0]["recall"].as_f64(), Some(1.0));
    assert!(out.join("index.fvg").exists());
}

#[test]
fn cycles_are_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let args = with("cycles", &small(&out, &["--cycles", "2", "--seed", "9"]));
        ok(&strs(&args));
        // Drop the timing columns.
        fs::read_to_string(out.join("cycles.csv"))
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(5).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    let a = run_once("a");
    let b = run_once("b");
    assert_eq!(a, b);
    assert_eq!(a.len(), 1 + 3);
}

#[test]
fn build_disk_then_search_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let args = with("build", &small(&out, &["--disk"]));
    let text = ok(&strs(&args));
    assert!(text.contains("disk"));
    let lti = out.join("index.fda");
    let args = with("search", &small(&out, &["--lti", lti.to_str().unwrap()]));
    ok(&strs(&args));
    assert!(out.join("search.jsonl").exists());

    let mout = dir.path().join("m");
    let args = with("merge", &small(&mout, &["--lti", lti.to_str().unwrap(), "--delete-frac", "0.2"]));
    ok(&strs(&args));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(mout.join("merge.json")).unwrap()).unwrap();
    assert_eq!(report["deleted"].as_u64(), Some(120));
}

#[test]
fn report_of_empty_log_prints_headers() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    fs::write(&log, "").unwrap();
    let text = ok(&["report", log.to_str().unwrap()]);
    assert!(text.contains("## cycles"));
}

#[test]
fn bad_input_fails_cleanly() {
    let out = run(&["report", "/nonexistent/run.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = run(&["build", "--policy", "bogus"]);
    assert!(!out.status.success());
}
