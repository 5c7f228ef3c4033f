//! End-to-end runs of the binary against in-process simulators.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::Value;

use logtrack_core::simulator::SyntheticModel;
use logtrack_net::{serve, Behavior, SimServer, SimServerConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_logtrack"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

async fn run_async(args: Vec<String>) -> Output {
    tokio::task::spawn_blocking(move || bin().args(&args).output().unwrap())
        .await
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(stdout(o).trim()).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn series(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = p(dir, name);
    let mut args = vec!["simulate", "series", "--out", &out];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

async fn sim(top_k: usize, seed: u64, behavior: Behavior) -> SimServer {
    let mut cfg = SimServerConfig::new(SyntheticModel::random(64, 2.0, 0.05, top_k, seed).unwrap());
    cfg.behavior = behavior;
    serve(cfg, "127.0.0.1:0".parse().unwrap()).await.unwrap()
}

fn fleet_file(dir: &Path, servers: &[&SimServer]) -> String {
    let mut text = String::new();
    for (i, s) in servers.iter().enumerate() {
        text.push_str(&format!(
            "[[endpoint]]\nid = \"e{i}\"\nbase_url = \"{}\"\nmodel = \"sim\"\ntimeout_secs = 5.0\n[endpoint.retry]\nmax_attempts = 2\nbackoff_secs = [0.01]\n\n",
            s.base_url()
        ));
    }
    let path = p(dir, "fleet.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn test_on_identical_sets_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    let a = series(d.path(), "a.jsonl", &["--len", "10", "--stream", "1"]);
    let o = run(&["test", "--a", &a, "--b", &a, "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["p_value"], 1.0);
    assert_eq!(v["significant"], false);
}

#[test]
fn test_on_shifted_sets_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let a = series(d.path(), "a.jsonl", &["--len", "10", "--stream", "1"]);
    let b = series(d.path(), "b.jsonl", &["--len", "10", "--stream", "2", "--variant", "logit-shift:1"]);
    let o = run(&["test", "--a", &a, "--b", &b, "--seed", "3"]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&o)["significant"], true);
    let exact = run(&["test", "--a", &a, "--b", &b, "--exact", "--text-only"]);
    assert_eq!(code(&exact), 3);
    assert_eq!(json(&exact)["permutations"]["mode"], "exact");
}

#[test]
fn seeded_commands_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let a = series(d.path(), "a.jsonl", &["--len", "10", "--stream", "1"]);
    let b = series(d.path(), "b.jsonl", &["--len", "10", "--stream", "2"]);
    let s = series(d.path(), "s.jsonl", &["--len", "600", "--change", "300:logit-shift:4"]);
    let cases: [&[&str]; 3] = [
        &["test", "--a", &a, "--b", &b, "--seed", "9"],
        &["scan", "--input", &s],
        &["bench", "--seed", "9", "--trials", "20", "--ladder", "0,1", "--methods", "lt,mmlu"],
    ];
    for args in cases {
        let (x, y) = (run(args), run(args));
        assert!(!x.stdout.is_empty(), "{args:?}: {}", stderr(&x));
        assert_eq!(x.stdout, y.stdout, "{args:?}");
    }
}

#[test]
fn scan_finds_the_injected_change() {
    let d = tempfile::tempdir().unwrap();
    let s = series(d.path(), "s.jsonl", &["--len", "2000", "--seed", "4", "--change", "700:logit-shift:4"]);
    let o = run(&["scan", "--input", &s]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let ev: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(ev["index"], 700);

    let quiet = series(d.path(), "q.jsonl", &["--len", "2000", "--seed", "4"]);
    let o = run(&["scan", "--input", &quiet]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&run(&["test", "--bogus"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["scan"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    let o = run(&["scan", "--input", "/nonexistent/series.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error[io]"), "{}", stderr(&o));
    let o = run(&["test", "--a", "x", "--b", "y", "--alpha", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error[invalid_input]"));
}

#[test]
fn verbose_prints_defaulted_parameters() {
    let d = tempfile::tempdir().unwrap();
    let a = series(d.path(), "a.jsonl", &["--len", "4"]);
    let o = run(&["-v", "test", "--a", &a, "--b", &a]);
    let err = stderr(&o);
    for field in ["permutations: 1000", "alpha: 0.05", "seed: None", "text_only: false"] {
        assert!(err.contains(field), "{field} missing from {err}");
    }
    assert!(err.contains("no --seed given, using 0"));
}

#[test]
fn bench_csv_and_report() {
    let d = tempfile::tempdir().unwrap();
    let out = p(d.path(), "bench.jsonl");
    let o = run(&["bench", "--seed", "1", "--trials", "20", "--ladder", "0,1", "--methods", "lt", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
    let csv = run(&["bench", "--seed", "1", "--trials", "20", "--ladder", "0,1", "--methods", "lt", "--format", "csv"]);
    assert!(stdout(&csv).starts_with("method,variant,magnitude,auc"));
    let r = run(&["report", "--bench", &out]);
    assert_eq!(code(&r), 0);
    assert!(stdout(&r).contains("logit-shift"), "{}", stdout(&r));

    let plan = p(d.path(), "plan.toml");
    std::fs::write(&plan, "ladder = [0.0, 0.5]\ntrials = 20\nmethods = [\"lt\"]\nseed = 5\n").unwrap();
    let from_plan = run(&["bench", "--plan", &plan]);
    assert_eq!(code(&from_plan), 0, "{}", stderr(&from_plan));
    assert!(stderr(&from_plan).contains("using the plan seed 5"));
}

#[test]
fn ablate_writes_one_row_per_prompt() {
    let d = tempfile::tempdir().unwrap();
    let plan = p(d.path(), "ablate.toml");
    std::fs::write(
        &plan,
        "models = 2\ntrials = 30\n[[prompts]]\nname = \"x\"\nnoise_sigma = 0.05\nlogit_seed = 1\n[[prompts]]\nname = \"hello\"\nnoise_sigma = 0.1\nlogit_seed = 2\n",
    )
    .unwrap();
    let o = run(&["ablate", "--plan", &plan, "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let total: f64 = rows.iter().map(|r| r["relative"].as_f64().unwrap()).sum();
    assert!(total.abs() < 1e-12);
}

#[tokio::test(flavor = "multi_thread")]
async fn survey_reports_k_values() {
    let (a, b, c) = (sim(5, 1, Behavior::Normal).await, sim(8, 2, Behavior::Normal).await, sim(20, 3, Behavior::Normal).await);
    let d = tempfile::tempdir().unwrap();
    let fleet = fleet_file(d.path(), &[&a, &b, &c]);
    let o = run_async(vec!["survey".into(), "--fleet".into(), fleet]).await;
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    let ks: Vec<u64> = v["entries"].as_array().unwrap().iter().map(|e| e["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, [5, 8, 20]);
    assert_eq!(v["fraction"], 1.0);

    let path = p(d.path(), "survey.json");
    std::fs::write(&path, stdout(&o)).unwrap();
    let r = run_async(vec!["report".into(), "--survey".into(), path]).await;
    assert!(stdout(&r).contains("3 endpoints, 3 reachable, 3 with logprobs (100.0% of reachable)"), "{}", stdout(&r));
}

#[tokio::test(flavor = "multi_thread")]
async fn probe_store_export_and_report() {
    let s = sim(20, 4, Behavior::Normal).await;
    let d = tempfile::tempdir().unwrap();
    let store = p(d.path(), "store");
    let args = |id: &str| -> Vec<String> {
        ["probe", "--base-url", &s.base_url(), "--model", "sim", "--id", id, "--store", &store]
            .map(String::from)
            .to_vec()
    };
    for id in ["one", "two", "two"] {
        let o = run_async(args(id)).await;
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let v = json(&o);
        assert_eq!(v["outcome"], "ok");
        assert_eq!(v["record"]["entries"].as_array().unwrap().len(), 20);
    }
    let exported = p(d.path(), "all.jsonl");
    let o = run_async(vec!["export".into(), "--store".into(), store.clone(), "--out".into(), exported.clone()]).await;
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&exported).unwrap().lines().count(), 3);
    let o = run_async(vec!["export".into(), "--store".into(), store.clone(), "--to".into(), "2000-01-01T00:00:00Z".into()]).await;
    assert!(o.stdout.is_empty());
    let r = run_async(vec!["report".into(), "--store".into(), store]).await;
    let text = stdout(&r);
    assert!(text.contains("one \"x\": 1 records") && text.contains("two \"x\": 2 records"), "{text}");
}

#[tokio::test(flavor = "multi_thread")]
async fn probe_failures_exit_two() {
    let s = sim(20, 5, Behavior::MinMaxTokens { min: 16 }).await;
    let o = run_async(["probe", "--base-url", &s.base_url(), "--model", "m"].map(String::from).to_vec()).await;
    assert_eq!(code(&o), 2);
    assert_eq!(json(&o)["outcome"], "protocol_error");
    assert!(stderr(&o).contains("error[probe]") && stderr(&o).contains("Expected a value >= 16"), "{}", stderr(&o));

    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1", l.local_addr().unwrap())
    };
    let o = run_async(["probe", "--base-url", &dead, "--model", "m", "--max-attempts", "1"].map(String::from).to_vec()).await;
    assert_eq!(code(&o), 2);
    assert_eq!(json(&o)["outcome"], "transport_error");
}

#[tokio::test(flavor = "multi_thread")]
async fn poll_then_scan_the_store() {
    let (a, b) = (sim(20, 6, Behavior::Normal).await, sim(20, 7, Behavior::Normal).await);
    let d = tempfile::tempdir().unwrap();
    let fleet = fleet_file(d.path(), &[&a, &b]);
    let store = p(d.path(), "store");
    let args = ["poll", "--fleet", &fleet, "--store", &store, "--ticks", "5", "--interval", "0.05", "--seed", "1", "--detect", "--window", "2", "--stats-window", "2"];
    let o = run_async(args.map(String::from).to_vec()).await;
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!((v["ticks"].as_u64(), v["stored"].as_u64()), (Some(5), Some(10)));
    let o = run_async(["scan", "--store", &store, "--endpoint", "e1", "--window", "2", "--stats-window", "2", "--floor", "5"].map(String::from).to_vec()).await;
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[tokio::test(flavor = "multi_thread")]
async fn live_test_reports_cost() {
    let mut cfg = SimServerConfig::new(SyntheticModel::random(64, 2.0, 0.05, 20, 8).unwrap());
    cfg.prompt_token_pattern = vec![1, 2, 1, 2, 1];
    let s = serve(cfg, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let d = tempfile::tempdir().unwrap();
    let fleet = fleet_file(d.path(), &[&s]);
    let o = run_async(["test", "--fleet", &fleet, "--endpoint-a", "e0", "--endpoint-b", "e0", "--seed", "1"].map(String::from).to_vec()).await;
    assert!(code(&o) == 0 || code(&o) == 3, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["requests"], 20);
    assert_eq!((v["usage"]["prompt_tokens"].as_u64(), v["usage"]["completion_tokens"].as_u64()), (Some(28), Some(20)));
    assert_eq!(s.request_count(), 20);
}

fn interrupt(pid: u32) {
    let ok = Command::new("kill").args(["-INT", &pid.to_string()]).status().unwrap();
    assert!(ok.success());
}

#[test]
fn simulate_serve_answers_probes_and_stops_on_interrupt() {
    let mut child = bin()
        .args(["simulate", "serve", "--bind", "127.0.0.1:0", "--top-k", "8", "--seed", "3"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().to_string();
    assert!(url.starts_with("http://127.0.0.1:"), "{url}");
    let o = run(&["probe", "--base-url", &url, "--model", "sim"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["record"]["entries"].as_array().unwrap().len(), 8);
    interrupt(child.id());
    assert!(child.wait().unwrap().success());
}

#[tokio::test(flavor = "multi_thread")]
async fn poll_stops_cleanly_on_interrupt() {
    let s = sim(20, 9, Behavior::Normal).await;
    let d = tempfile::tempdir().unwrap();
    let fleet = fleet_file(d.path(), &[&s]);
    let store: PathBuf = d.path().join("store");
    let child = bin()
        .args(["poll", "--fleet", &fleet, "--store", store.to_str().unwrap(), "--interval", "0.05", "--seed", "2"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    tokio::time::sleep(Duration::from_millis(600)).await;
    interrupt(child.id());
    let o = tokio::task::spawn_blocking(move || child.wait_with_output().unwrap()).await.unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert!(v["ticks"].as_u64().unwrap() >= 2);
    assert_eq!(v["ticks"], v["stored"]);
}
