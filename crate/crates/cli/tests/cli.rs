use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bufrelay"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const HALF: [&str; 4] = ["--ps", "0.5", "--pr", "0.5"];

fn with_half<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(HALF).collect()
}

#[test]
fn solve_reports_agreeing_threshold() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &with_half(&["solve", "--rs", "1", "--rr", "2", "--nr", "14"]),
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = json(&dir.path().join("solve.json"));
    assert_eq!(report["agree"], true);
    let q = report["q_th_rvia"].as_u64().unwrap();
    let set: Vec<u64> = report["optimal_set"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert!(set.contains(&q));
    assert_eq!(report["rd_switch_state"], 12);
    assert!(report["closed_form"].is_null());
}

#[test]
fn solve_symmetric_includes_closed_form() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &with_half(&["solve", "--rs", "1", "--rr", "1", "--nr", "14"]),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let report = json(&dir.path().join("solve.json"));
    assert_eq!(report["closed_form"]["matches_sweep"], true);
    assert_eq!(report["closed_form"]["set"], serde_json::json!([6, 7]));
    assert_eq!(report["optimal_set"], report["closed_form"]["set"]);
}

#[test]
fn small_buffer_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &with_half(&["solve", "--rs", "3", "--rr", "2", "--nr", "3"]),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn missing_keys_and_bad_policy_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        run(&["solve", "--nr", "5"], dir.path()).status.code(),
        Some(2)
    );
    let args = with_half(&[
        "simulate", "--rs", "1", "--rr", "1", "--nr", "4", "--policy", "bogus",
    ]);
    assert_eq!(run(&args, dir.path()).status.code(), Some(2));
    let args = with_half(&[
        "simulate",
        "--rs",
        "1",
        "--rr",
        "1",
        "--nr",
        "4",
        "--policy",
        "threshold:9",
    ]);
    assert_eq!(run(&args, dir.path()).status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("relay.cfg");
    std::fs::write(
        &cfg,
        "# relay\nrs = 1\nrr = 1\nnr = 3\nps = 0.5\npr = 0.5\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = run(
        &["sweep", "--config", cfg.to_str().unwrap(), "--nr", "2"],
        &out,
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&out.join("manifest.json"))["config"]["nr"], 2);
}

#[test]
fn simulate_is_deterministic_and_lists_outputs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = with_half(&[
        "simulate",
        "--rs",
        "2",
        "--rr",
        "1",
        "--nr",
        "6",
        "--policy",
        "dopn",
        "--horizon",
        "100000",
        "--seed",
        "7",
    ]);
    assert_eq!(run(&args, a.path()).status.code(), Some(0));
    assert_eq!(run(&args, b.path()).status.code(), Some(0));
    for name in ["replications.csv", "histogram.csv", "simulate.json"] {
        let x = std::fs::read_to_string(a.path().join(name)).unwrap();
        let y = std::fs::read_to_string(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let csv = std::fs::read_to_string(a.path().join("replications.csv")).unwrap();
    assert!(csv.starts_with("replication,seed,throughput\n"));
    let manifest = json(&a.path().join("manifest.json"));
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(listed.len(), 4);
    assert!(listed.last().unwrap().ends_with("manifest.json"));
    for f in listed {
        assert!(Path::new(f).exists(), "{f}");
    }
    assert_eq!(manifest["settings"]["policy"], "threshold:0");
}

#[test]
fn simulate_optimal_matches_worked_case() {
    let dir = TempDir::new().unwrap();
    let args = with_half(&[
        "simulate",
        "--rs",
        "1",
        "--rr",
        "1",
        "--nr",
        "2",
        "--horizon",
        "200000",
    ]);
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    let r = json(&dir.path().join("simulate.json"));
    let mean = r["mean_throughput"].as_f64().unwrap();
    let se = r["std_error"].as_f64().unwrap();
    assert!((mean - 0.3).abs() <= 4.0 * se, "{mean} +- {se}");
}

#[test]
fn sweep_symmetric_writes_closed_form_table() {
    let dir = TempDir::new().unwrap();
    let args = with_half(&[
        "sweep",
        "--rs",
        "2",
        "--rr",
        "2",
        "--nr",
        "10",
        "--symmetric",
    ]);
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    let table = std::fs::read_to_string(dir.path().join("symmetric.csv")).unwrap();
    assert!(table.starts_with("m,q_th,objective,throughput\n"));
    assert_eq!(table.lines().count(), 7);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("q_th,throughput\n"));

    let args = with_half(&[
        "sweep",
        "--rs",
        "2",
        "--rr",
        "1",
        "--nr",
        "10",
        "--symmetric",
    ]);
    assert_eq!(run(&args, dir.path()).status.code(), Some(2));
}

#[test]
fn compare_and_bench_emit_tables() {
    let dir = TempDir::new().unwrap();
    let args = with_half(&[
        "compare",
        "--rs",
        "2",
        "--rr",
        "3",
        "--nr",
        "12",
        "--horizon",
        "20000",
        "--policy",
        "csi:0.5",
    ]);
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);

    let bench = dir.path().join("bench");
    let args = with_half(&["bench", "--rs", "4", "--rr", "2", "--nrs", "20,30"]);
    assert_eq!(run(&args, &bench).status.code(), Some(0));
    let csv = std::fs::read_to_string(bench.join("bench.csv")).unwrap();
    assert!(csv.starts_with("nr,states,t_pia,t_rvia,t_brute,t_alg3,flops_direct,flops_updated\n"));
    assert_eq!(csv.lines().count(), 3);
}
