use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cantestbed")).current_dir(repo()).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn records(o: &Output) -> Vec<Value> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn digest(o: &Output) -> String {
    let r = records(o);
    r.iter().find(|r| r["record"] == "bundle").unwrap()["digest"].as_str().unwrap().to_string()
}

#[test]
fn run_reports_expectations() {
    let o = cli(&["run", "scenarios/collision-nominal.scenario"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("PASS [0]"), "{out}");
    assert!(out.contains("bundle digest"));
}

#[test]
fn run_twice_gives_identical_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let run = |out: &Path| cli(&["run", "scenarios/light-fuzz.scenario", "--seed", "7", "--format", "records", "--out", out.to_str().unwrap()]);
    let (oa, ob) = (run(&a), run(&b));
    assert_eq!(code(&oa), 0);
    assert_eq!(digest(&oa), digest(&ob));
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let summary = records(&oa).into_iter().find(|r| r["record"] == "summary").unwrap();
    assert_eq!(summary["seed"], 7);
    let other = cli(&["run", "scenarios/light-fuzz.scenario", "--seed", "8", "--format", "records"]);
    assert_ne!(digest(&oa), digest(&other));
}

#[test]
fn exit_codes() {
    let o = cli(&["run", "scenarios/does-not-exist.scenario"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does-not-exist.scenario"));
    assert_eq!(code(&cli(&["run"])), 2);
    assert_eq!(code(&cli(&["frobnicate"])), 2);
    assert_eq!(code(&cli(&["run", "scenarios/brake-nominal.scenario", "--strategy", "fpga"])), 3);
    assert_eq!(code(&cli(&["run", "scenarios/brake-nominal.scenario", "--bitrate", "0"])), 3);

    // An expectation that cannot hold: the airbag never fires without a collision.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fails.scenario");
    std::fs::write(
        &path,
        r#"format_version = 1
name = "fails"
stop_ms = 100

[[nodes]]
name = "ECU2"
role = "airbag_light"

[[nodes]]
name = "ECU3"
role = "sensors"

[[expect]]
check = "signal"
node = "ECU2"
signal = "airbag_deployed"
value = 1
at_ms = 10
within_ms = 50
"#,
    )
    .unwrap();
    let o = cli(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("FAIL [0]"));
}

#[test]
fn replay_train_quantise_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let o = cli(&["run", "scenarios/brake-spoof.scenario", "--out", &p("bundle")]);
    assert_eq!(code(&o), 0);
    let trace = p("bundle/bus.csv");

    // Both deployments: two latency columns and their ratio.
    let o = cli(&["replay", &trace, "--model", "models/ids-default.json", "--format", "records"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = records(&o);
    assert_eq!(r.iter().filter(|r| r["record"] == "latency").count(), 2);
    let ratio = r.iter().find(|r| r["record"] == "latency_ratio").unwrap()["ecu_over_controller"].as_f64().unwrap();
    assert!(ratio >= 6.3, "{ratio}");
    assert_eq!(r[0]["trace_records"], r[0]["bus_frames"]);
    let o = cli(&["replay", &trace, "--model", "models/ids-default.json", "--strategy", "controller"]);
    assert!(stdout(&o).contains("controller_coupled") && !stdout(&o).contains("ecu_coupled"));

    std::fs::write(p("empty.csv"), "# nothing here\n").unwrap();
    let o = cli(&["replay", &p("empty.csv"), "--model", "models/ids-default.json"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no records"));

    // A perfect oracle scores 100%.
    let o = cli(&["eval", &trace, "--predictions", &trace, "--format", "records"]);
    assert_eq!(code(&o), 0);
    assert_eq!(records(&o)[0]["report"]["accuracy"], 1.0);
    let o = cli(&["eval", &trace, "--model", "models/ids-default.json", "--format", "records"]);
    assert!(records(&o)[0]["report"]["accuracy"].as_f64().unwrap() > 0.9);

    let o = cli(&["train", &trace, "--epochs", "2", "--seed", "3", "--out", &p("m.json"), "--float-out", &p("f.json"), "--format", "records"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o2 = cli(&["train", &trace, "--epochs", "2", "--seed", "3", "--out", &p("m2.json")]);
    assert_eq!(code(&o2), 0);
    assert_eq!(std::fs::read(p("m.json")).unwrap(), std::fs::read(p("m2.json")).unwrap());
    let o = cli(&["quantise", &p("f.json"), "--out", &p("q.json"), "--format", "records"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(p("m.json")).unwrap(), std::fs::read(p("q.json")).unwrap());
    assert_eq!(records(&o)[0]["max_weight_error"].as_array().unwrap().len(), 5);

    let o = cli(&["report", &p("bundle")]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("4 of 4 expectations passed"));
    assert_eq!(code(&cli(&["report", &p("nowhere")])), 3);
}

#[test]
fn serve_answers_commands() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cantestbed"))
        .current_dir(repo())
        .args(["serve", "--port", "0"])
        .env_remove("CANTESTBED_TOKEN")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(2).unwrap().to_string();
    let mut s = TcpStream::connect(&addr).unwrap();
    writeln!(s, r#"{{"id": 1, "op": "sys_ctrl"}}"#).unwrap();
    let mut reply = String::new();
    BufReader::new(s.try_clone().unwrap()).read_line(&mut reply).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    let v: Value = serde_json::from_str(&reply).unwrap();
    assert_eq!(v["ok"], true, "{v}");
    assert_eq!(v["result"]["bitrate"], 500_000);
}
