use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use sksv::turnstile::{decode_state, StreamMode};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn sksv(args: &[&str]) -> Output {
    sksv_env(args, &[])
}

fn sksv_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sksv"));
    cmd.args(args).stdin(Stdio::null()).env_remove("SKSV_BUDGET_MB");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(path: &Path) -> Value {
    let bytes = std::fs::read(path).unwrap();
    let rest = &bytes[6..];
    let nl = rest.iter().position(|b| *b == b'\n').unwrap();
    serde_json::from_slice(&rest[..nl]).unwrap()
}

/// The manifest is the last line on standard error.
fn manifest(out: &Output) -> Value {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    serde_json::from_str(err.lines().last().expect("manifest line")).unwrap()
}

fn init_golden_config(dir: &TempDir, name: &str) -> PathBuf {
    let path = dir.path().join(name);
    let out = sksv(&["init", "--rows", "32", "--cols", "4", "--m", "16", "--k", "2", "--seed", "7", "--out", s(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn init_sizes_the_sketch() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("x.sksv");
    let out = sksv(&[
        "init", "--mode", "matrix", "--rows", "512", "--cols", "32", "--k", "4", "--eps", "0.5", "--delta", "0.05",
        "--seed", "7", "--out", s(&path),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "m=897");
    let h = header(&path);
    assert_eq!(h["m"], 897);
    assert_eq!(h["N"], 512);
    assert_eq!(h["mode"], "matrix");
    assert_eq!(h["updates_applied"], 0);
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 6 + header_len(&path) + 1 + 897 * 32 * 8);
}

fn header_len(path: &Path) -> usize {
    let bytes = std::fs::read(path).unwrap();
    bytes[6..].iter().position(|b| *b == b'\n').unwrap()
}

#[test]
fn init_graph_uses_pair_count() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("g.sksv");
    let out = sksv(&["init", "--mode", "graph", "--vertices", "64", "--k", "56", "--seed", "1", "--out", s(&path)]);
    assert_eq!(code(&out), 0);
    let h = header(&path);
    assert_eq!(h["N"], 2016);
    assert_eq!(h["n"], 64);
    assert_eq!(h["mode"], "graph");
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("x.sksv");
    let p = s(&path);
    assert_eq!(code(&sksv(&["init", "--rows", "10", "--cols", "2", "--k", "1", "--out", p])), 2);
    assert!(!path.exists());
    assert_eq!(code(&sksv(&["init", "--rows", "10", "--cols", "2", "--seed", "1", "--out", p])), 2);
    assert_eq!(code(&sksv(&["init", "--rows", "10", "--cols", "2", "--k", "1", "--eps", "1.5", "--seed", "1", "--out", p])), 2);
    assert_eq!(code(&sksv(&["init", "--rows", "10", "--cols", "2", "--phi", "identity", "--seed", "1", "--out", p])), 2);
    let ok = sksv(&["init", "--rows", "10", "--cols", "2", "--phi", "identity", "--unsafe-test-mode", "--seed", "1", "--out", p]);
    assert_eq!(code(&ok), 0);
    assert_eq!(header(&path)["m"], 10);
    assert_eq!(code(&sksv(&["init", "--rows", "10", "--cols", "2", "--k", "1", "--seed", "1", "--out", p])), 2);
    assert_eq!(code(&sksv(&["init", "--rows", "10", "--cols", "2", "--k", "1", "--seed", "1", "--force", "--out", p])), 0);
}

#[test]
fn replaying_the_fixture_reproduces_the_golden_state() {
    let dir = TempDir::new().unwrap();
    let path = init_golden_config(&dir, "s.sksv");
    let out = sksv(&["update", s(&path), "--input", s(&fixture("stream.jsonl"))]);
    assert_eq!(code(&out), 0);
    let m = manifest(&out);
    assert_eq!(m["stats"]["applied"], 64);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(fixture("golden_gaussian.sksv")).unwrap());
}

#[test]
fn update_reads_standard_input() {
    let dir = TempDir::new().unwrap();
    let path = init_golden_config(&dir, "s.sksv");
    let stream = std::fs::read(fixture("stream.jsonl")).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_sksv"))
        .args(["update", s(&path)])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(&stream).unwrap();
    assert!(child.wait().unwrap().success());
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(fixture("golden_gaussian.sksv")).unwrap());
}

#[test]
fn empty_stream_leaves_state_untouched() {
    let dir = TempDir::new().unwrap();
    let path = init_golden_config(&dir, "s.sksv");
    let before = std::fs::read(&path).unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    let out = sksv(&["update", s(&path), "--input", s(&empty)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&path).unwrap(), before);
    let m = manifest(&out);
    assert_eq!(m["command"], "update");
    assert_eq!(m["stats"]["applied"], 0);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 0);
}

#[test]
fn bad_records_abort_or_skip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("g.sksv");
    assert_eq!(code(&sksv(&["init", "--mode", "graph", "--vertices", "64", "--m", "20", "--seed", "3", "--out", s(&path)])), 0);
    let before = std::fs::read(&path).unwrap();
    let bad = fixture("bad_vertex.jsonl");
    let out = sksv(&["update", s(&path), "--input", s(&bad)]);
    assert_eq!(code(&out), 3);
    assert_eq!(std::fs::read(&path).unwrap(), before);

    let out = sksv(&["update", s(&path), "--input", s(&bad), "--on-error", "skip"]);
    assert_eq!(code(&out), 0);
    let m = manifest(&out);
    assert_eq!(m["stats"]["applied"], 1);
    assert_eq!(m["stats"]["rejected"], 1);
    assert_eq!(header(&path)["updates_applied"], 1);

    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "{\"row\": 1}\nnot json\n").unwrap();
    let m_path = dir.path().join("m.sksv");
    init_golden_config(&dir, "m.sksv");
    assert_eq!(code(&sksv(&["update", s(&m_path), "--input", s(&garbage)])), 3);
}

#[test]
fn spectrum_is_deterministic_and_handles_empty_sketches() {
    let dir = TempDir::new().unwrap();
    let path = init_golden_config(&dir, "s.sksv");
    let out = sksv(&["spectrum", s(&path)]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rank"], 0);
    assert_eq!(report["rank_report"]["hint"], 2);
    assert!(report["rank_report"]["warning"].is_string());

    assert_eq!(code(&sksv(&["update", s(&path), "--input", s(&fixture("stream.jsonl"))])), 0);
    let a = sksv(&["spectrum", s(&path)]);
    let b = sksv(&["spectrum", s(&path)]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["rank"], 4);
    assert_eq!(report["right_vectors"].as_array().unwrap().len(), 4);

    let file = dir.path().join("spec.json");
    assert_eq!(code(&sksv(&["spectrum", s(&path), "--out", s(&file)])), 0);
    assert_eq!(std::fs::read(&file).unwrap(), a.stdout);
}

#[test]
fn triangle_with_identity_operator() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("k3.sksv");
    let init = sksv(&[
        "init", "--mode", "graph", "--vertices", "3", "--phi", "identity", "--unsafe-test-mode", "--k", "2", "--seed", "0",
        "--out", s(&path),
    ]);
    assert_eq!(code(&init), 0);
    let log = fixture("k3.jsonl");
    assert_eq!(code(&sksv(&["update", s(&path), "--input", s(&log)])), 0);

    let out = sksv(&["spectrum", s(&path), "--log", s(&log)]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let eig: Vec<f64> = r["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(eig.len(), 2);
    assert!(eig.iter().all(|l| (l - 3.0).abs() < 1e-9));
    assert_eq!(r["graph"]["k_detected"], 2);
    assert_eq!(r["graph"]["c_oracle"], 1);

    let cert = sksv(&["certify", s(&path), "--log", s(&log)]);
    assert_eq!(code(&cert), 0);
    let c: Value = serde_json::from_slice(&cert.stdout).unwrap();
    for rec in c["certificate"]["records"].as_array().unwrap() {
        assert!((rec["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(c["graph"]["components"], 1);
    assert_eq!(c["graph"]["gram_matches_laplacian"], true);
}

fn planted_state(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("planted.sksv");
    let init = sksv(&["init", "--rows", "256", "--cols", "6", "--m", "120", "--k", "2", "--seed", "7", "--out", s(&path)]);
    assert_eq!(code(&init), 0);
    assert_eq!(code(&sksv(&["update", s(&path), "--input", s(&fixture("planted.jsonl"))])), 0);
    path
}

#[test]
fn certify_pinned_planted_fixture() {
    let dir = TempDir::new().unwrap();
    let path = planted_state(&dir);
    let log = fixture("planted.jsonl");
    let pass = sksv(&["certify", s(&path), "--log", s(&log), "--eps", "0.5"]);
    assert_eq!(code(&pass), 0, "{}", String::from_utf8_lossy(&pass.stderr));
    let c: Value = serde_json::from_slice(&pass.stdout).unwrap();
    assert_eq!(c["pass"], true);
    assert_eq!(c["certificate"]["seed"], 7);
    assert_eq!(c["certificate"]["m"], 120);
    assert_eq!(c["weyl"]["pass"], true);
    assert_eq!(c["replay_residual"], 0.0);

    let fail = sksv(&["certify", s(&path), "--log", s(&log), "--eps", "0.01"]);
    assert_eq!(code(&fail), 1);
    let c: Value = serde_json::from_slice(&fail.stdout).unwrap();
    assert_eq!(c["pass"], false);
    assert_eq!(manifest(&fail)["exit_code"], 1);
}

#[test]
fn certify_respects_the_budget() {
    let dir = TempDir::new().unwrap();
    let path = planted_state(&dir);
    let out = sksv_env(&["certify", s(&path), "--log", s(&fixture("planted.jsonl"))], &[("SKSV_BUDGET_MB", "0")]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("SKSV_BUDGET_MB"));
}

#[test]
fn certify_rejects_a_log_that_did_not_build_the_state() {
    let dir = TempDir::new().unwrap();
    let path = planted_state(&dir);
    let out = sksv(&["certify", s(&path), "--log", s(&fixture("stream.jsonl"))]);
    assert_eq!(code(&out), 6);
}

#[test]
fn oracle_dumps_the_decomposition() {
    let dir = TempDir::new().unwrap();
    let path = planted_state(&dir);
    let out = sksv(&["oracle", s(&path), "--log", s(&fixture("planted.jsonl"))]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["rank"], 2);
    let sv: Vec<f64> = r["singular_values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(sv[0] > sv[1] && sv[1] > 0.0);
}

#[test]
fn merge_semantics() {
    let dir = TempDir::new().unwrap();
    let a = init_golden_config(&dir, "a.sksv");
    let b = init_golden_config(&dir, "b.sksv");
    let fresh = init_golden_config(&dir, "fresh.sksv");
    assert_eq!(code(&sksv(&["update", s(&a), "--input", s(&fixture("stream_part_a.jsonl"))])), 0);
    assert_eq!(code(&sksv(&["update", s(&b), "--input", s(&fixture("stream_part_b.jsonl"))])), 0);

    let same = dir.path().join("same.sksv");
    assert_eq!(code(&sksv(&["merge", s(&a), s(&fresh), "--out", s(&same)])), 0);
    assert_eq!(std::fs::read(&same).unwrap(), std::fs::read(&a).unwrap());

    let merged = dir.path().join("merged.sksv");
    let out = sksv(&["merge", s(&a), s(&b), "--out", s(&merged)]);
    assert_eq!(code(&out), 0);
    assert_eq!(manifest(&out)["inputs"].as_array().unwrap().len(), 2);
    let (m, mode) = decode_state(&std::fs::read(&merged).unwrap()).unwrap();
    let (g, _) = decode_state(&std::fs::read(fixture("golden_gaussian.sksv")).unwrap()).unwrap();
    assert_eq!(mode, StreamMode::Matrix);
    assert_eq!(m.updates_applied(), 64);
    assert!((m.sketch() - g.sketch()).norm() <= 1e-12 * g.sketch().norm());

    let other = dir.path().join("other.sksv");
    let init = sksv(&["init", "--rows", "32", "--cols", "4", "--m", "16", "--k", "2", "--seed", "8", "--out", s(&other)]);
    assert_eq!(code(&init), 0);
    assert_eq!(code(&sksv(&["merge", s(&a), s(&other), "--out", s(&merged)])), 6);
    let graph = dir.path().join("graph.sksv");
    assert_eq!(code(&sksv(&["init", "--mode", "graph", "--vertices", "4", "--m", "16", "--seed", "7", "--out", s(&graph)])), 0);
    assert_eq!(code(&sksv(&["merge", s(&a), s(&graph), "--out", s(&merged)])), 6);
}

#[test]
fn numerical_failures_exit_4() {
    let dir = TempDir::new().unwrap();
    let path = init_golden_config(&dir, "s.sksv");
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(code(&sksv(&["spectrum", s(&path)])), 4);
}

#[test]
fn manifest_file_records_digests() {
    let dir = TempDir::new().unwrap();
    let path = init_golden_config(&dir, "s.sksv");
    let mpath = dir.path().join("run.json");
    let out = sksv(&["--manifest", s(&mpath), "update", s(&path), "--input", s(&fixture("stream.jsonl"))]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&mpath).unwrap();
    assert_eq!(text.lines().count(), 1);
    let m: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["command"], "update");
    assert_eq!(m["config"]["seed"], 7);
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    for i in inputs {
        let h = i["xxh3"].as_str().unwrap();
        assert_eq!(h.len(), 16);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    }
    assert_eq!(m["outputs"][0], s(&path));
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert!(out.stderr.is_empty());
}
