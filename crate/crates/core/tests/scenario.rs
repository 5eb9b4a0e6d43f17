use std::path::{Path, PathBuf};

use cantestbed::scenario::{Overrides, Scenario, ScenarioConfig, ScenarioError, StrategySelect};
use cantestbed::{Bitrate, SimTime};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenarios_dir().join(format!("{name}.scenario"))).unwrap()
}

const FUNCTIONAL: [&str; 6] = [
    "collision-nominal",
    "collision-dos",
    "light-nominal",
    "light-fuzz",
    "brake-nominal",
    "brake-spoof",
];

#[test]
fn functional_scenarios_meet_expectations() {
    for name in FUNCTIONAL {
        let run = load(name).run().unwrap();
        assert!(!run.results.is_empty(), "{name}");
        assert!(run.passed(), "{name}\n{}", run.expectation_table());
    }
}

#[test]
fn bundles_are_byte_identical() {
    let a = load("brake-spoof").run().unwrap().bundle().unwrap();
    let b = load("brake-spoof").run().unwrap().bundle().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    for f in [
        "bus.csv",
        "bus_log.ndjson",
        "status.ndjson",
        "capture.vcd",
        "verdicts.ndjson",
        "metrics.json",
        "latency.json",
        "expectations.json",
        "summary.json",
    ] {
        assert!(a.files.contains_key(f), "{f}");
    }
}

#[test]
fn seed_override_changes_fuzz_traffic() {
    let base = load("light-fuzz").run().unwrap().bundle().unwrap();
    let mut s = load("light-fuzz");
    s.apply(&Overrides { seed: Some(99), ..Default::default() });
    let other = s.run().unwrap().bundle().unwrap();
    assert_ne!(base.files["bus.csv"], other.files["bus.csv"]);
}

#[test]
fn strategy_override_limits_classifiers() {
    let mut s = load("collision-nominal");
    s.apply(&Overrides { strategy: Some(StrategySelect::Controller), ..Default::default() });
    let run = s.run().unwrap();
    assert_eq!(run.sim.strategies().len(), 1);
    assert_eq!(run.latency().len(), 1);
}

#[test]
fn bitrate_override_keeps_behaviour() {
    let mut s = load("brake-nominal");
    s.apply(&Overrides { bitrate: Some(Bitrate::new(250_000).unwrap()), ..Default::default() });
    let run = s.run().unwrap();
    assert_eq!(run.sim.bitrate().bits_per_sec(), 250_000);
    assert!(run.passed(), "{}", run.expectation_table());
}

#[test]
fn bundle_written_to_disk() {
    let bundle = load("light-nominal").run().unwrap().bundle().unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.write_to(dir.path()).unwrap();
    for (name, data) in &bundle.files {
        assert_eq!(&std::fs::read(dir.path().join(name)).unwrap(), data);
    }
}

#[test]
fn capture_parses_back_as_vcd() {
    let run = load("collision-nominal").run().unwrap();
    let bundle = run.bundle().unwrap();
    let text = &bundle.files["capture.vcd"];
    let mut parser = vcd::Parser::new(&text[..]);
    let header = parser.parse_header().unwrap();
    assert_eq!(header.timescale, Some((1, vcd::TimescaleUnit::US)));
    let bus = header.find_var(&["can", "bus"]).unwrap().code;
    let airbag = header.find_var(&["can", "ECU2", "airbag_deployed"]).unwrap().code;
    let mut t = 0u64;
    let mut bus_changes = 0;
    let mut airbag_on = None;
    for cmd in parser {
        match cmd.unwrap() {
            vcd::Command::Timestamp(ts) => t = ts,
            vcd::Command::ChangeScalar(i, v) if i == bus => bus_changes += usize::from(v == vcd::Value::V0),
            vcd::Command::ChangeScalar(i, vcd::Value::V1) if i == airbag => airbag_on = airbag_on.or(Some(t)),
            _ => {}
        }
    }
    assert!(bus_changes > 0);
    // 2 VCD units per tick at 500 kbit/s.
    let logged = run.sim.signal_log()["ECU2.airbag_deployed"].iter().find(|(_, v)| *v == 1).unwrap().0;
    assert_eq!(airbag_on, Some(logged.ticks() * 2));
}

#[test]
fn corpus_is_about_twenty_thousand_frames() {
    let run = load("corpus").run().unwrap();
    let n = run.sim.bus_log().len();
    assert!((18_000..=22_000).contains(&n), "{n}");
    let s = run.summary();
    for c in ["Benign", "DoS", "Fuzzing", "Spoof"] {
        assert!(s.frames_by_class[c] > 1000, "{c}");
    }
    assert_eq!(s.dos_tagged as u64, s.frames_by_class["DoS"]);
}

#[test]
fn config_round_trips_through_toml() {
    let s = load("brake-spoof");
    let again = ScenarioConfig::from_toml(&s.config.to_toml()).unwrap();
    assert_eq!(again, s.config);
}

fn base() -> String {
    r#"
format_version = 1
name = "t"
stop_ms = 50

[[nodes]]
name = "ECU1"
role = "engine_brake"

[[nodes]]
name = "ECU3"
role = "sensors"
"#
    .to_string()
}

fn parse(extra: &str) -> Result<Scenario, ScenarioError> {
    Scenario::from_toml(&(base() + extra), Path::new("."))
}

#[test]
fn minimal_scenario_runs() {
    let run = parse("").unwrap().run().unwrap();
    assert_eq!(run.sim.now(), SimTime(25_000));
    assert!(run.passed());
}

#[test]
fn validation_errors() {
    let err = |extra: &str| parse(extra).map(|_| ()).unwrap_err();
    assert!(matches!(err("[[script]]\nat_ms = 1\naction = \"set_sensor\"\nnode = \"ECU9\"\nsensor = \"x\"\nvalue = 1\n"), ScenarioError::Script { step: 0, .. }));
    assert!(matches!(err("[[script]]\nat_ms = 1\naction = \"set_sensor\"\nnode = \"ECU3\"\nsensor = \"radar\"\nvalue = 1\n"), ScenarioError::Script { .. }));
    assert!(matches!(err("[[script]]\nat_ms = 1\naction = \"stop_attack\"\nname = \"nope\"\n"), ScenarioError::Script { .. }));
    assert!(matches!(err("[[expect]]\ncheck = \"signal\"\nnode = \"ECU1\"\nsignal = \"warp\"\nvalue = 1\n"), ScenarioError::Validation(_)));
    assert!(matches!(err("[[expect]]\ncheck = \"ids_threat\"\n"), ScenarioError::Validation(_)));
    assert!(matches!(err("[ids]\nmodel = \"missing.json\"\n"), ScenarioError::Io { .. }));
    assert!(matches!(err("bogus = 1\n"), ScenarioError::Parse(_)));
    let bad_version = base().replace("format_version = 1", "format_version = 2");
    assert!(matches!(Scenario::from_toml(&bad_version, Path::new(".")), Err(ScenarioError::Validation(_))));
}

#[test]
fn runtime_script_error_names_step() {
    // Validation cannot know that no attack is running at 20 ms.
    let s = parse(
        r#"
[[script]]
at_ms = 10
action = "start_attack"
name = "f"
attack = { kind = "DosFlood", duration_ms = 5.0 }

[[script]]
at_ms = 20
action = "stop_attack"
name = "f"
"#,
    )
    .unwrap();
    match s.run() {
        Err(ScenarioError::Script { step, .. }) => assert_eq!(step, 1),
        other => panic!("{:?}", other.map(|_| ())),
    }
}
