use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn repex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repex"))
        .args(args)
        .env("REPEX_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn t_remd(cycles: u64, extra: &str) -> String {
    format!(
        r#"{{
        "system": {{"kind": "double_well", "a": 1.0, "b": 2.0}},
        "dimensions": [{{"kind": "temperature", "ladder": {{"lo": 280, "hi": 380, "n": 4, "progression": "geometric"}}}}],
        "cycles": {cycles},
        "steps_per_cycle": 100,
        "stride": 10{extra}
    }}"#
    )
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn summary_value(dir: &Path, key: &str) -> String {
    read(dir, "summary.csv")
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")).map(str::to_string))
        .unwrap_or_else(|| panic!("summary lacks {key}"))
}

#[test]
fn run_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &t_remd(4, ""));
    let out = tmp.path().join("out");
    let o = repex(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.resolved.json",
        "exchanges.jsonl",
        "events.jsonl",
        "timings.csv",
        "samples.jsonl",
        "summary.csv",
        "restart.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(read(&out, "exchanges.jsonl").lines().count(), 4);
    assert_eq!(read(&out, "timings.csv").lines().count(), 5);
    let resolved: serde_json::Value = serde_json::from_str(&read(&out, "config.resolved.json")).unwrap();
    assert_eq!(resolved["step_size"], 0.1);
    assert_eq!(resolved["dimensions"][0]["ladder"].as_array().unwrap().len(), 4);
}

#[test]
fn zero_cycle_run_writes_headers_only_and_analyze_reports_no_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &t_remd(0, ""));
    let out = tmp.path().join("out");
    let dir = out.to_str().unwrap();
    assert!(repex(&["run", "--config", &cfg, "--out", dir]).status.success());
    assert_eq!(
        read(&out, "timings.csv"),
        "cycle,dim,t_md,t_ex,t_data,t_framework_over,t_launch_over,t_c,wall_clock_s\n"
    );
    assert_eq!(read(&out, "exchanges.jsonl"), "");
    assert_eq!(read(&out, "samples.jsonl"), "");
    let o = repex(&["analyze", "--out", dir]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no data"));
}

#[test]
fn config_errors_name_the_key_path() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{"system": {"kind": "double_well", "a": 1, "b": 2},
        "dimensions": [{"kind": "temperature", "ladder": [-10, 300]}], "cycles": 1}"#;
    let cfg = write_config(tmp.path(), "c.json", body);
    let o = repex(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimensions[0].ladder"));
}

#[test]
fn identical_seeds_give_identical_traces() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &t_remd(5, ""));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert!(repex(&["run", "--config", &cfg, "--seed", seed, "--out", dir.to_str().unwrap()]).status.success());
    }
    assert_eq!(read(&a, "exchanges.jsonl"), read(&b, "exchanges.jsonl"));
    assert_eq!(read(&a, "events.jsonl"), read(&b, "events.jsonl"));
    assert_eq!(read(&a, "samples.jsonl"), read(&b, "samples.jsonl"));
    assert_ne!(read(&a, "exchanges.jsonl"), read(&c, "exchanges.jsonl"));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let short = write_config(tmp.path(), "short.json", &t_remd(3, ""));
    let long = write_config(tmp.path(), "long.json", &t_remd(6, ""));
    let (whole, split) = (tmp.path().join("whole"), tmp.path().join("split"));
    assert!(repex(&["run", "--config", &long, "--out", whole.to_str().unwrap()]).status.success());
    assert!(repex(&["run", "--config", &short, "--out", split.to_str().unwrap()]).status.success());
    let restart = split.join("restart.json");
    let o = repex(&["run", "--config", &long, "--out", split.to_str().unwrap(), "--resume", restart.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["exchanges.jsonl", "events.jsonl", "samples.jsonl"] {
        assert_eq!(read(&whole, f), read(&split, f), "{f}");
    }
    let strip = |s: String| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(read(&whole, "timings.csv")), strip(read(&split, "timings.csv")));
    let whole_restart: serde_json::Value = serde_json::from_str(&read(&whole, "restart.json")).unwrap();
    let split_restart: serde_json::Value = serde_json::from_str(&read(&split, "restart.json")).unwrap();
    assert_eq!(whole_restart["replicas"], split_restart["replicas"]);
}

#[test]
fn resume_refuses_changed_physics() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &t_remd(2, ""));
    let other = write_config(tmp.path(), "d.json", &t_remd(4, r#", "step_size": 0.05"#));
    let out = tmp.path().join("o");
    assert!(repex(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let restart = out.join("restart.json");
    let o = repex(&["run", "--config", &other, "--out", out.to_str().unwrap(), "--resume", restart.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("differs"));
}

#[test]
fn walltime_truncation_then_resume_completes() {
    let tmp = TempDir::new().unwrap();
    let virtual_pilot = r#", "pilot": {"walltime": 25, "durations": {"md": {"kind": "constant", "seconds": 10}, "launch_overhead": 0}}"#;
    let cfg = write_config(tmp.path(), "c.json", &t_remd(4, virtual_pilot));
    let out = tmp.path().join("o");
    assert!(repex(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(summary_value(&out, "truncated"), "true");
    assert_eq!(summary_value(&out, "cycles_completed"), "2");
    let restart = out.join("restart.json");
    let o = repex(&["run", "--resume", restart.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&out, "exchanges.jsonl").lines().count(), 4);
    assert_eq!(summary_value(&out, "cycles_completed"), "4");
}

#[test]
fn simulate_mode_two_reports_waves() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{"system": {"kind": "double_well", "a": 1, "b": 2},
        "dimensions": [{"kind": "temperature", "ladder": {"lo": 280, "hi": 380, "n": 10, "progression": "geometric"}}],
        "cycles": 2,
        "pilot": {"total_cores": 4, "backend": {"kind": "virtual_clock"},
                  "durations": {"md": {"kind": "constant", "seconds": 10}, "launch_overhead": 0}}}"#;
    let cfg = write_config(tmp.path(), "c.json", body);
    let out = tmp.path().join("o");
    let o = repex(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_value(&out, "execution_mode"), "ModeII");
    assert_eq!(summary_value(&out, "md_waves"), "3");
    assert_eq!(summary_value(&out, "waves_per_phase"), "3;3");
    assert!(!out.join("restart.json").exists());
    let events = read(&out, "events.jsonl");
    assert_eq!(events.lines().filter(|l| l.contains("\"event\":\"start\"") && l.contains("\"kind\":\"md\"")).count(), 20);
}

#[test]
fn simulate_refuses_real_workers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &t_remd(1, ""));
    let o = repex(&["simulate", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("virtual_clock"));
}

#[test]
fn analyze_against_itself_is_fully_efficient() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &t_remd(4, ""));
    let out = tmp.path().join("o");
    let dir = out.to_str().unwrap();
    assert!(repex(&["run", "--config", &cfg, "--out", dir]).status.success());
    let o = repex(&["analyze", "--out", dir, "--baseline", dir]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = read(&out.join("analysis"), "metrics.csv");
    assert!(metrics.contains("weak_efficiency_percent,100\n"), "{metrics}");
    assert!(metrics.contains("strong_efficiency_percent,100\n"), "{metrics}");
    let acceptance = read(&out.join("analysis"), "acceptance.csv");
    assert_eq!(acceptance.lines().count(), 4);
    let surfaces = fs::read_dir(out.join("analysis"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("free_energy_"))
        .count();
    assert_eq!(surfaces, 4);
}

#[test]
fn analyze_reports_missing_artifacts() {
    let tmp = TempDir::new().unwrap();
    let o = repex(&["analyze", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing run artifact"));
}

#[test]
fn async_torsion_run_with_umbrellas_analyzes() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{"system": {"kind": "torsion"},
        "dimensions": [
            {"kind": "temperature", "ladder": [300, 330]},
            {"kind": "umbrella", "force_constant": 0.02, "coordinate": 0, "ladder": {"lo": 0, "hi": 360, "n": 4, "progression": "uniform"}}
        ],
        "cycles": 3, "steps_per_cycle": 50, "stride": 5, "step_size": 1.0,
        "pattern": {"kind": "async", "criterion": {"kind": "fifo_n", "n": 4}},
        "pilot": {"total_cores": 4, "backend": {"kind": "real_workers", "workers": 2}}}"#;
    let cfg = write_config(tmp.path(), "c.json", body);
    let out = tmp.path().join("o");
    let dir = out.to_str().unwrap();
    let o = repex(&["run", "--config", &cfg, "--out", dir]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = repex(&["analyze", "--out", dir]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("acceptance_dim1"));
}
