use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phasorguard"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(scenario: &str, dir: &Path) {
    ok(&["simulate", "--scenario", scenario, "--out", p(dir)]);
}

/// Last JSON document on stdout (tables come first).
fn trailing_json(stdout: &str) -> Value {
    let at = stdout.find("\n{").map_or(0, |i| i + 1);
    serde_json::from_str(&stdout[at..]).unwrap_or_else(|e| panic!("{e}: {stdout}"))
}

#[test]
fn place_prints_table_and_json() {
    let out = ok(&["place", "--feeder", "ieee34", "--k", "3", "--solver", "greedy"]);
    assert!(out.lines().next().unwrap().starts_with("solver"));
    let v = trailing_json(&out);
    assert_eq!(v["solver"], "greedy");
    assert_eq!(v["placement"].as_array().unwrap().len(), 3);
    assert_eq!(v["evaluations"], 34 + 33 + 32);
    assert!(v["objective"].as_f64().unwrap() > 0.0);
}

#[test]
fn random_place_follows_the_seed() {
    let a = ok(&["place", "--k", "3", "--solver", "random", "--seed", "11", "--format", "json"]);
    let b = ok(&["place", "--k", "3", "--solver", "random", "--seed", "11", "--format", "json"]);
    let c = ok(&["place", "--k", "3", "--solver", "random", "--seed", "12", "--format", "json"]);
    let pick = |s: &str| serde_json::from_str::<Value>(s).unwrap()["placement"].clone();
    assert_eq!(pick(&a), pick(&b));
    assert_ne!(pick(&a), pick(&c));
}

#[test]
fn three_phase_candidates_on_reduced_feeder() {
    let out = ok(&[
        "place", "--feeder", "ieee34", "--k", "1", "--candidates", "three-phase", "--reduce-laterals", "--format", "json",
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["evaluations"].as_u64().unwrap() < 34);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["place"]), 1);
    assert_eq!(code(&["place", "--k", "3", "--bogus"]), 1);
    assert_eq!(code(&["place", "--k", "0"]), 1);
    assert_eq!(code(&["analyze", "--out", "/tmp/never"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[cusum]\nlamda = 0.9\n").unwrap();
    assert_eq!(code(&["--config", p(&cfg), "place", "--k", "1"]), 2);
    assert_eq!(code(&["--set", "segment.t1=500", "place", "--k", "1"]), 2);
    assert_eq!(code(&["--config", "/nonexistent.toml", "place", "--k", "1"]), 2);
    assert_eq!(code(&["place", "--k", "3", "--solver", "exhaustive", "--budget", "10"]), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["place", "--feeder", "nowhere", "--k", "1"]), 3);
    assert_eq!(code(&["simulate", "--scenario", "nowhere", "--out", p(dir.path())]), 3);
    assert_eq!(
        code(&["analyze", "--input", p(dir.path()), "--feeder", "ieee34", "--sensors", "7,19", "--out", p(dir.path())]),
        3
    );
    let bad = dir.path().join("events.jsonl");
    std::fs::write(&bad, "not json\n").unwrap();
    simulate("steady", &dir.path().join("s"));
    assert_eq!(code(&["report", "--events", p(&bad), "--truth", p(&dir.path().join("s"))]), 3);
}

#[test]
fn unreachable_central_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    simulate("steady", dir.path());
    let port = free_port();
    let t = Instant::now();
    let c = code(&[
        "--set",
        "network.linger_s=0.3",
        "serve-local",
        "--input",
        p(dir.path()),
        "--bus",
        "7",
        "--rate",
        "0",
        "--central",
        &format!("127.0.0.1:{port}"),
    ]);
    assert_eq!(c, 4);
    assert!(t.elapsed() < Duration::from_secs(20));
}

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let read = |sub: &str, seed: &str| {
        let d = dir.path().join(sub);
        ok(&["--seed", seed, "simulate", "--scenario", "steady", "--out", p(&d)]);
        std::fs::read(d.join("sensor_7.csv")).unwrap()
    };
    assert_eq!(read("a", "5"), read("b", "5"));
    assert_ne!(read("a", "5"), read("c", "6"));
}

#[test]
fn analyze_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate("slgf", &data);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["analyze", "--input", p(&data), "--out", p(&a)]);
    ok(&["analyze", "--input", p(&data), "--out", p(&b)]);
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 5, "{names:?}");
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn no_event_scenario_has_no_incidents() {
    let dir = tempfile::tempdir().unwrap();
    simulate("steady", &dir.path().join("d"));
    let out = ok(&["analyze", "--input", p(&dir.path().join("d")), "--out", p(&dir.path().join("o"))]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["incidents"], 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("o/events.jsonl")).unwrap(), "");
}

#[test]
fn report_matches_the_fault_incident() {
    let dir = tempfile::tempdir().unwrap();
    let (d, o) = (dir.path().join("d"), dir.path().join("o"));
    simulate("slgf", &d);
    ok(&["analyze", "--input", p(&d), "--out", p(&o)]);
    let out = ok(&["report", "--events", p(&o.join("events.jsonl")), "--truth", p(&d)]);
    assert!(out.starts_with("scenario slgf:"));
    let v = trailing_json(&out);
    assert_eq!(v["misses"], 0);
    assert_eq!(v["false_alarms"], 0);
    let fault = &v["events"][0];
    assert_eq!(fault["kind"], "slg-fault");
    assert!(fault["latency"].as_i64().unwrap().abs() <= 120);
    assert!(fault["origins"].as_array().unwrap().contains(&Value::from("central")));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn spawn(args: &[&str]) -> Child {
    bin().args(args).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap()
}

fn wait(child: Child, what: &str) -> Output {
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{what}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn networked_processes_reproduce_offline_log() {
    let dir = tempfile::tempdir().unwrap();
    let (d, off, net) = (dir.path().join("d"), dir.path().join("off"), dir.path().join("net"));
    simulate("replay-minor", &d);
    ok(&["analyze", "--input", p(&d), "--out", p(&off)]);

    let port = free_port();
    let addr = format!("127.0.0.1:{port}");
    let central = spawn(&["serve-central", "--input", p(&d), "--listen", &addr, "--out", p(&net)]);
    thread::sleep(Duration::from_millis(300));
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(d.join("groundtruth.json")).unwrap()).unwrap();
    let sensors: Vec<String> = truth["sensors"].as_array().unwrap().iter().map(|b| b.to_string()).collect();
    let locals: Vec<Child> = sensors
        .iter()
        .map(|b| spawn(&["serve-local", "--input", p(&d), "--bus", b, "--rate", "0", "--central", &addr]))
        .collect();
    for (l, b) in locals.into_iter().zip(&sensors) {
        wait(l, &format!("sensor {b}"));
    }
    wait(central, "central");
    assert_eq!(
        std::fs::read_to_string(net.join("events.jsonl")).unwrap(),
        std::fs::read_to_string(off.join("events.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(net.join("central_metric.csv")).unwrap(),
        std::fs::read(off.join("central_metric.csv")).unwrap()
    );
}
