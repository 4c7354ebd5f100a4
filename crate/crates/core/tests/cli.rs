//! End-to-end runs of the `bespoke-forge` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bespoke-forge"))
        .args(args)
        .env("BESPOKE_FORGE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = forge(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_kind(args: &[&str]) -> String {
    let out = forge(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|e| {
        panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr))
    });
    err["error"]["kind"].as_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sample(dir: &Path, topology: &str, bits: &str) -> String {
    let out = dir.join("models");
    ok(&["sample", "--topology", topology, "--activation-bits", bits, "--seed", "5", "--out-dir", out.to_str().unwrap()]);
    out.join(format!("{topology}.json")).to_str().unwrap().to_string()
}

#[test]
fn compile_simulate_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = sample(dir.path(), "10-4-3", "4");
    let build = dir.path().join("build");
    let build_s = build.to_str().unwrap();
    ok(&["compile", "--model", &model, "--mode", "heuristic", "--out-dir", build_s]);
    for f in ["solution.json", "coproc.v", "coproc_manifest.json", "program.json", "core_program.c", "manifest.json"] {
        assert!(build.join(f).is_file(), "{f} missing");
    }
    let solution = json(&build.join("solution.json"));
    let calls = json(&build.join("program.json"))["calls"].as_array().unwrap().len() as u64;
    assert_eq!(solution["objective"].as_u64(), Some(calls));

    let sim = dir.path().join("sim");
    let program = build.join("program.json");
    ok(&["simulate", "--model", &model, "--program", program.to_str().unwrap(), "--random", "5", "--out-dir", sim.to_str().unwrap()]);
    let report = json(&sim.join("sim_report.json"));
    assert_eq!(report["inputs"], 5);
    assert_eq!(report["reference_mismatches"], 0);

    let cmp = dir.path().join("cmp");
    let text = ok(&["compare", "--model", &model, "--program", program.to_str().unwrap(), "--out-dir", cmp.to_str().unwrap()]);
    assert!(text.contains("flexrv") && text.contains("serv-only"));
    let table = json(&cmp.join("comparison.json"));
    assert_eq!(table["rows"].as_array().unwrap().len(), 4);
    assert_eq!(table["rows"][0]["speedup"], 1.0);
}

#[test]
fn manifest_hashes_match_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let model = sample(dir.path(), "8-3-2", "5");
    let build = dir.path().join("b");
    ok(&["compile", "--model", &model, "--reproducible", "--out-dir", build.to_str().unwrap()]);
    let manifest = json(&build.join("manifest.json"));
    assert_eq!(manifest["reproducible"], true);
    assert!(json(&build.join("solution.json"))["stats"]["wall_time_ms"].is_null());
    for entry in manifest["outputs"].as_array().unwrap() {
        let bytes = fs::read(build.join(entry["file"].as_str().unwrap())).unwrap();
        let digest = sha256_hex(&bytes);
        assert_eq!(entry["sha256"].as_str().unwrap(), digest);
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[test]
fn budget_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let model = sample(dir.path(), "24-5-3", "4");
    let out = dir.path().join("sweep");
    ok(&["compile", "--model", &model, "--budget-sweep", "2..16:2", "--work-limit", "20000", "--out-dir", out.to_str().unwrap()]);
    let sweep = json(&out.join("sweep.json"));
    let objectives: Vec<u64> = sweep.as_array().unwrap().iter().map(|r| r["objective"].as_u64().unwrap()).collect();
    assert_eq!(objectives.len(), 8);
    assert!(objectives.windows(2).all(|w| w[1] <= w[0]), "{objectives:?}");
    assert!(out.join("budget_16").join("coproc.v").is_file());
}

#[test]
fn failures_are_structured_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = sample(dir.path(), "6-2", "4");
    let out = dir.path().join("x");
    let out_s = out.to_str().unwrap();
    assert_eq!(error_kind(&["compile", "--model", &model, "--budget", "0", "--out-dir", out_s]), "BudgetExceeded");
    assert_eq!(error_kind(&["compile", "--model", &model, "--budget", "17", "--out-dir", out_s]), "BudgetExceeded");
    assert_eq!(error_kind(&["compile", "--model", "/nonexistent/model.json", "--out-dir", out_s]), "IoError");
    assert_eq!(error_kind(&["compile", "--model", &model, "--candidates", "3", "--out-dir", out_s]), "Infeasible");
    assert_eq!(error_kind(&["frobnicate"]), "UsageError");

    ok(&["compile", "--model", &model, "--mode", "heuristic", "--out-dir", out_s]);
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "[]").unwrap();
    let program = out.join("program.json");
    let args = ["simulate", "--model", &model, "--program", program.to_str().unwrap(), "--inputs", empty.to_str().unwrap(), "--out-dir", out_s];
    assert_eq!(error_kind(&args), "EmptyInputSet");
}

#[test]
fn cost_report_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cost");
    ok(&["costreport", "--samples", "50", "--out-dir", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("cost_summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    let summary = json(&out.join("cost_summary.json"));
    assert_eq!(summary["summaries"].as_array().unwrap().len(), 4);
}

#[test]
fn sample_writes_every_reference_topology() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sample", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 9);
}
