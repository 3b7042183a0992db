use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hbsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbsim"))
        .current_dir(dir)
        .env_remove("HBSIM_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn sweep_peaks_in_the_same_region_on_both_boards() {
    let tmp = TempDir::new().unwrap();
    for platform in ["kv260", "zcu104"] {
        let o = hbsim(tmp.path(), &["--out", platform, "sweep-btt", "--platform", platform]);
        assert_eq!(code(&o), 0);
        let report = json(&tmp.path().join(platform).join("sweep_btt.json"));
        let peaks = report["peak_btts"].as_array().unwrap();
        assert!(!peaks.is_empty());
        assert!(peaks.iter().all(|b| [8192, 16384].contains(&b.as_u64().unwrap())), "{peaks:?}");
        assert_eq!(report["points"].as_array().unwrap().len(), 9);
    }
    let o = hbsim(tmp.path(), &["--out", "csv", "--format", "csv", "sweep-btt"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(tmp.path().join("csv/sweep_btt.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn same_inputs_give_identical_artifacts() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&hbsim(tmp.path(), &["--out", out, "--seed", "5", "run-tiny", "--steps", "4"])), 0);
    }
    let read = |d: &str, f: &str| fs::read(tmp.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "tiny_trace.json"), read("b", "tiny_trace.json"));
    assert_eq!(read("a", "weights/manifest.json"), read("b", "weights/manifest.json"));
    let strip = |d: &str| {
        let mut m = json(&tmp.path().join(d).join("run_manifest.json"));
        let obj = m.as_object_mut().unwrap();
        obj.remove("wall_clock_s");
        obj.remove("output_dir");
        m
    };
    assert_eq!(strip("a"), strip("b"));
}

#[test]
fn schedule_reports_idle_cycles() {
    let tmp = TempDir::new().unwrap();
    let run = |out: &str, g: &str, mode: &str| {
        let o = hbsim(tmp.path(), &["--out", out, "schedule", "--group-size", g, "--context", "1024", "--mode", mode]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        json(&tmp.path().join(out).join("schedule.json"))
    };
    let opt = run("o4", "4", "optimized");
    assert_eq!(opt["vpu_idle_after_fill"], 0);
    assert_eq!(opt["valid"], true);
    let naive = run("n4", "4", "naive");
    assert!(naive["vpu_idle_after_fill"].as_u64().unwrap() >= 8 * 78);
    assert_eq!(run("o1", "1", "optimized")["total_cycles"], run("n1", "1", "naive")["total_cycles"]);

    let bad = hbsim(tmp.path(), &["--out", "bad", "schedule", "--group-size", "5"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("group size 5"));
    let long = hbsim(tmp.path(), &["--out", "bad", "schedule", "--context", "9000"]);
    assert_eq!(code(&long), 2);
}

#[test]
fn throughput_matches_boards_and_fails_on_capacity() {
    let tmp = TempDir::new().unwrap();
    for (platform, want) in [("kv260", 4.8), ("zcu104", 8.6)] {
        let o = hbsim(tmp.path(), &["--out", platform, "throughput", "--platform", platform]);
        assert_eq!(code(&o), 0);
        let tok = json(&tmp.path().join(platform).join("throughput.json"))["tokens_per_s"].as_f64().unwrap();
        assert!((tok - want).abs() <= 0.05 * want, "{platform}: {tok}");
    }
    let o = hbsim(tmp.path(), &["--out", "res", "throughput", "--model", "llama3-8b-resident"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("overflow"));
    assert!(tmp.path().join("res/run_manifest.json").exists());
}

#[test]
fn capacity_and_breakdown() {
    let tmp = TempDir::new().unwrap();
    let o = hbsim(tmp.path(), &["--out", "c", "capacity", "--model", "llama2-7b-offloaded"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&tmp.path().join("c/capacity.json"))["max_context"], 2048);
    let o = hbsim(tmp.path(), &["--out", "c", "capacity", "--model", "llama3-8b", "--context", "8192"]);
    assert_eq!(code(&o), 1);
    let o = hbsim(tmp.path(), &["--out", "b", "--format", "csv", "breakdown", "--model", "llama2-7b"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(tmp.path().join("b/breakdown.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("model,embedding_bytes"));
    assert!(csv.contains("3407306752"));
}

#[test]
fn verify_passes_and_catches_corrupt_weights() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&hbsim(tmp.path(), &["--out", "t", "run-tiny"])), 0);
    let o = hbsim(tmp.path(), &["--out", "v", "verify", "--weights", "t/weights"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&tmp.path().join("v/verify.json"));
    assert_eq!(report["passed"], true);
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"gemv 1x1") && names.contains(&"weight manifest"));

    let blob = tmp.path().join("t/weights/lm_head.scales");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[0] ^= 1;
    fs::write(&blob, bytes).unwrap();
    let o = hbsim(tmp.path(), &["--out", "v", "verify", "--weights", "t/weights"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL weight manifest: weight file: hash mismatch"));
}

#[test]
fn config_errors_and_overrides() {
    let tmp = TempDir::new().unwrap();
    let o = hbsim(tmp.path(), &["--out", "x", "throughput", "--platform", "vcu118"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("known: kv260"));
    assert_eq!(code(&hbsim(tmp.path(), &["--out", "x", "verify", "--sizes", "3by4"])), 2);
    assert_eq!(code(&hbsim(tmp.path(), &["--out", "x", "--config", "missing.toml", "breakdown"])), 2);
    assert_eq!(code(&hbsim(tmp.path(), &["no-such-verb"])), 2);

    // A larger inference-time bandwidth loss lowers throughput.
    fs::write(tmp.path().join("slow.toml"), "[platforms.kv260]\ninference_drop = 0.1\n").unwrap();
    let tok = |dir: &str| json(&tmp.path().join(dir).join("throughput.json"))["tokens_per_s"].as_f64().unwrap();
    assert_eq!(code(&hbsim(tmp.path(), &["--out", "base", "throughput"])), 0);
    assert_eq!(code(&hbsim(tmp.path(), &["--out", "slow", "--config", "slow.toml", "throughput"])), 0);
    assert!(tok("slow") < 0.95 * tok("base"), "{} vs {}", tok("slow"), tok("base"));
    let env = Command::new(env!("CARGO_BIN_EXE_hbsim"))
        .current_dir(tmp.path())
        .env("HBSIM_CONFIG", "slow.toml")
        .args(["--out", "env", "throughput"])
        .output()
        .unwrap();
    assert_eq!(code(&env), 0);
    assert_eq!(tok("env"), tok("slow"));
    assert!(json(&tmp.path().join("env/run_manifest.json"))["config_path"].as_str().unwrap().ends_with("slow.toml"));
}

#[test]
fn writes_only_inside_the_output_directory() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&hbsim(tmp.path(), &["--out", "only", "run-tiny", "--steps", "2"])), 0);
    let entries: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec!["only"]);
}
