use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evcount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evcount"))
        .args(args)
        .env_remove("EVCOUNT_SEED")
        .output()
        .expect("spawn evcount")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Final total from the per-second CSV on stdout.
fn final_count(out: &Output) -> u64 {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .skip(1)
        .last()
        .map_or(0, |l| l.rsplit(',').next().unwrap().parse().unwrap())
}

fn json(path: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn count_agrees_with_sim_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (bin, truth) = (path(dir.path(), "run.bin"), path(dir.path(), "truth.csv"));
    let sim = evcount(&[
        "sim", "--seed", "1", "--duration-s", "20", "--setpoint", "200", "--events-bin", &bin, "--truth-out", &truth,
    ]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));

    let truth_rows = fs::read_to_string(&truth).unwrap();
    assert!(truth_rows.starts_with("grain_id,spawn_t_us,exit_t_us\n"));
    let truth = truth_rows.lines().count() as u64 - 1;
    assert!(truth > 30);

    let count = evcount(&["count", &bin]);
    assert!(count.status.success());
    let n = final_count(&count);
    assert!(n.abs_diff(truth) as f64 <= 0.02 * truth as f64, "{n} vs {truth}");
    // The sim's own pipeline saw the same stream.
    assert_eq!(count.stdout, sim.stdout);
}

#[test]
fn sim_report_carries_expected_total() {
    let dir = tempfile::tempdir().unwrap();
    let report = path(dir.path(), "report.json");
    let out = evcount(&["sim", "--duration-s", "300", "--setpoint", "200", "--seed", "1", "--json-out", &report]);
    assert!(out.status.success());
    let r = json(&report);
    assert_eq!(r["expected"], 1000.0);
    let count = r["pipeline_count"].as_u64().unwrap();
    assert!((count as f64 - 1000.0).abs() <= 30.0, "{count}");
    let per_second: u64 = r["per_second"].as_array().unwrap().iter().map(|s| s["count_delta"].as_u64().unwrap()).sum();
    assert_eq!(per_second, count);
}

#[test]
fn empty_file_counts_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "empty.csv");
    fs::write(&csv, "").unwrap();
    let out = evcount(&["count", &csv]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "second,count_delta,count_total\n");
    assert_eq!(final_count(&out), 0);
}

#[test]
fn repeated_counts_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "g.csv");
    let gen = evcount(&["gen", "--rate", "120", "--duration-s", "5", "--seed", "9", "--events-csv", &csv]);
    assert!(gen.status.success());
    let (a, b) = (path(dir.path(), "a.json"), path(dir.path(), "b.json"));
    let first = evcount(&["count", &csv, "--json-out", &a]);
    let second = evcount(&["count", &csv, "--json-out", &b, "--concurrent"]);
    assert_eq!(first.stdout, second.stdout);
    let strip = |mut v: serde_json::Value| {
        let o = v.as_object_mut().unwrap();
        o.remove("wall_clock_s");
        o.remove("throughput_events_per_s");
        v
    };
    assert_eq!(strip(json(&a)), strip(json(&b)));
}

#[test]
fn seed_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.bin"), path(dir.path(), "b.bin"));
    let args = |out: &str, seed: &str| {
        ["gen", "--rate", "100", "--duration-s", "2", "--seed", seed, "--events-bin", out].map(String::from)
    };
    let via_flag = evcount(&args(&a, "7").each_ref().map(String::as_str));
    let via_env = Command::new(env!("CARGO_BIN_EXE_evcount"))
        .args(args(&b, "1"))
        .env("EVCOUNT_SEED", "7")
        .output()
        .unwrap();
    assert!(via_flag.status.success() && via_env.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn empty_hopper_exits_with_safety_code() {
    let out = evcount(&["sim", "--hopper", "0", "--noise-rate", "0", "--duration-s", "60", "--setpoint", "200"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("safety trip"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(evcount(&["sim", "--setpoint", "0"]).status.code(), Some(1));
    assert_eq!(evcount(&["count"]).status.code(), Some(1));
    assert_eq!(evcount(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(evcount(&["count", "x.csv", "--connectivity", "6"]).status.code(), Some(1));
    assert_eq!(evcount(&["gen", "--rate", "10"]).status.code(), Some(1));
    assert_eq!(evcount(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(evcount(&["count", &path(dir.path(), "missing.bin")]).status.code(), Some(2));

    let csv = path(dir.path(), "bad.csv");
    fs::write(&csv, "0,1,1,1\n5,oops,1,1\n").unwrap();
    let out = evcount(&["count", &csv]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&out.stderr));

    let bin = path(dir.path(), "bad.bin");
    fs::write(&bin, b"NOPE").unwrap();
    assert_eq!(evcount(&["count", &bin]).status.code(), Some(2));
}
