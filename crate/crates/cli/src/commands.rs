use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde_json::{json, Value};

use cantestbed::attack::{load_replay, AttackProfile, AttackSpec, ReplayOptions, ReplayRecord};
use cantestbed::can::CanFrame;
use cantestbed::ecu::{EcuConfig, Role};
use cantestbed::ids::{
    evaluate_windows, quantise_model, windows_from_trace, FloatMlp, LabeledWindow, QuantMlpModel, TrainConfig,
};
use cantestbed::monitor::{compute_metrics, LatencySummary, MetricsReport};
use cantestbed::scenario::{
    calibrate_quantised, train_on_windows, IdsSection, MonitorSection, Overrides, Scenario, ScenarioConfig,
    ScenarioRun, ScriptAction, ScriptStep, StrategySelect, ACTIVATION_BITS, SCENARIO_FORMAT_VERSION,
};
use cantestbed::{Bitrate, SimTime, TrafficClass};
use cantestbed_service::{ServiceConfig, TOKEN_ENV};

use crate::output::{latency_ratio, latency_table, metrics_table, record};
use crate::{CliError, Format, SimFlags};

type Result<T> = std::result::Result<T, CliError>;

fn overrides(flags: &SimFlags) -> Result<Overrides> {
    let bitrate = flags.bitrate.map(Bitrate::new).transpose().map_err(CliError::validation)?;
    let strategy = flags
        .strategy
        .as_deref()
        .map(str::parse::<StrategySelect>)
        .transpose()
        .map_err(CliError::Validation)?;
    Ok(Overrides { seed: flags.seed, bitrate, strategy })
}

fn is_scenario(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "scenario" || e == "toml")
}

/// Labelled frames from a scenario run or a CSV trace.
fn labelled_frames(path: &Path) -> Result<Vec<(CanFrame, TrafficClass)>> {
    if is_scenario(path) {
        let run = Scenario::load(path).map_err(CliError::validation)?.run().map_err(CliError::failed)?;
        Ok(run.sim.bus_log().iter().map(|r| (r.frame.clone(), r.label)).collect())
    } else {
        let trace = load_replay(path, &ReplayOptions::default())
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Ok(trace.records.into_iter().map(|r| (r.frame, r.label)).collect())
    }
}

fn windows(frames: &[(CanFrame, TrafficClass)]) -> Vec<LabeledWindow> {
    windows_from_trace(frames.iter().map(|(f, l)| (f, *l)))
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

pub fn run(path: &Path, flags: &SimFlags, format: Format, out: Option<&Path>) -> Result<ExitCode> {
    let mut scenario = Scenario::load(path).map_err(CliError::validation)?;
    scenario.apply(&overrides(flags)?);
    let run = scenario.run().map_err(CliError::failed)?;
    let bundle = run.bundle().map_err(CliError::failed)?;
    if let Some(dir) = out {
        bundle.write_to(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    }
    let summary = run.summary();
    match format {
        Format::Records => {
            for r in &run.results {
                record("expectation", to_json(r));
            }
            for (s, m) in run.metrics() {
                record("metrics", json!({"strategy": s, "report": m}));
            }
            for l in run.latency() {
                record("latency", to_json(&l));
            }
            record("summary", to_json(&summary));
            record("bundle", json!({"digest": bundle.digest(), "dir": out}));
        }
        Format::Table => {
            println!(
                "scenario {}  seed {}  bitrate {}  stop {} ms",
                summary.name, summary.seed, summary.bitrate, summary.stop_ms
            );
            println!(
                "frames {}  error frames {}  events {}",
                summary.stats.frames, summary.stats.errors, summary.stats.events
            );
            let classes: Vec<String> = summary.frames_by_class.iter().map(|(c, n)| format!("{c} {n}")).collect();
            println!("by class: {}", classes.join(", "));
            for (s, n) in &summary.threat_verdicts {
                println!("threat verdicts {s}: {n}");
            }
            for w in &summary.warnings {
                println!("warning: {w}");
            }
            println!();
            if !run.results.is_empty() {
                print!("{}", run.expectation_table());
                println!();
            }
            for (s, m) in run.metrics() {
                if m.total > 0 {
                    metrics_table(s.name(), &m);
                }
            }
            latency_table(&run.latency());
            println!(
                "{} of {} expectations passed",
                summary.expectations_passed, summary.expectations_total
            );
            println!("bundle digest {}", bundle.digest());
            if let Some(dir) = out {
                println!("bundle written to {}", dir.display());
            }
        }
    }
    Ok(if run.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// A network holding only the IDS node, with the trace injected from t=0.
fn replay_scenario(trace: &Path, model: &Path, flags: &SimFlags, time_scale: f64) -> Result<Scenario> {
    let o = overrides(flags)?;
    let mut ids = EcuConfig::new("IDS", Role::IdsNode);
    // Keep the bus to the trace alone.
    ids.life_period_ms = 1e12;
    ids.life_offset_ms = Some(1e12);
    let config = ScenarioConfig {
        format_version: SCENARIO_FORMAT_VERSION,
        name: format!("replay {}", trace.display()),
        description: None,
        bitrate: o.bitrate.unwrap_or_default(),
        seed: o.seed.unwrap_or(0),
        stop_ms: 1e12,
        messages: BTreeMap::new(),
        nodes: vec![ids],
        ids: Some(IdsSection {
            model: model.to_path_buf(),
            strategy: o.strategy.unwrap_or_default(),
            profile: cantestbed::ids::PAPER_ARTIX7.into(),
            profiles: Vec::new(),
            host: Some("IDS".into()),
        }),
        monitor: MonitorSection::default(),
        script: vec![ScriptStep {
            at_ms: 0.0,
            action: ScriptAction::StartAttack {
                attack: AttackSpec {
                    profile: AttackProfile::Replay { path: trace.to_path_buf(), time_scale, default_attack: None },
                    duration_ms: None,
                    seed_stream: None,
                },
                name: Some("trace".into()),
            },
        }],
        expect: Vec::new(),
    };
    Scenario::from_config(config, Path::new(".")).map_err(CliError::validation)
}

pub fn replay(
    trace: &Path,
    model: &Path,
    flags: &SimFlags,
    time_scale: f64,
    format: Format,
    out: Option<&Path>,
) -> Result<ExitCode> {
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(CliError::Validation("--time-scale must be positive".into()));
    }
    let records = load_replay(trace, &ReplayOptions::default())
        .map_err(|e| CliError::Validation(format!("{}: {e}", trace.display())))?;
    let scenario = replay_scenario(trace, model, flags, time_scale)?;
    let mut sim = scenario.build().map_err(CliError::failed)?;
    let b = sim.bitrate();
    let chunk = b.ticks_from_ms(50.0);
    // Run in slices until the injector has drained, then let the last
    // verdicts land.
    sim.run_until(SimTime(b.ticks_from_ms(1.0))).map_err(CliError::failed)?;
    while !sim.active_attacks().is_empty() {
        let t = sim.now() + chunk;
        sim.run_until(t).map_err(CliError::failed)?;
    }
    let t = sim.now() + b.ticks_from_ms(20.0);
    sim.run_until(t).map_err(CliError::failed)?;
    let run = ScenarioRun { scenario, sim, results: Vec::new() };
    let metrics = run.metrics();
    let latency = run.latency();
    let stats = run.sim.stats();
    if let Some(dir) = out {
        let bundle = run.bundle().map_err(CliError::failed)?;
        bundle.write_to(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    }
    match format {
        Format::Records => {
            record(
                "replay",
                json!({"trace_records": records.len(), "bus_frames": stats.frames, "dropped": stats.attack_dropped}),
            );
            for (s, m) in &metrics {
                record("metrics", json!({"strategy": s, "report": m}));
            }
            for l in &latency {
                record("latency", to_json(l));
            }
            if let Some(r) = latency_ratio(&latency) {
                record("latency_ratio", json!({"ecu_over_controller": r}));
            }
        }
        Format::Table => {
            println!(
                "trace {}: {} records, {} frames on the bus, {} dropped by the injector",
                trace.display(),
                records.len(),
                stats.frames,
                stats.attack_dropped
            );
            println!();
            for (s, m) in &metrics {
                metrics_table(s.name(), m);
            }
            latency_table(&latency);
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn serve(
    bind: &str,
    port: u16,
    scenario: Option<&Path>,
    root: PathBuf,
    static_dir: Option<PathBuf>,
) -> Result<ExitCode> {
    let scenario = scenario.map(Scenario::load).transpose().map_err(CliError::validation)?;
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    let listener = TcpListener::bind((bind, port)).map_err(|e| CliError::Failed(format!("{bind}:{port}: {e}")))?;
    let config = ServiceConfig { scenario, root, token, static_dir, ..Default::default() };
    let handle = cantestbed_service::spawn(listener, config).map_err(CliError::failed)?;
    eprintln!("listening on {} (NDJSON over TCP, WebSocket upgrade on the same port)", handle.local_addr());
    handle.join();
    Ok(ExitCode::SUCCESS)
}

fn print_outcome_metrics(format: Format, name: &str, m: &MetricsReport) {
    match format {
        Format::Table => metrics_table(name, m),
        Format::Records => record("metrics", json!({"model": name, "report": m})),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    corpus: &Path,
    out: &Path,
    float_out: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    train_fraction: f64,
    format: Format,
) -> Result<ExitCode> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CliError::Validation("--train-fraction must lie strictly between 0 and 1".into()));
    }
    let mut config = TrainConfig::default();
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = epochs {
        config.epochs = e;
    }
    let frames = labelled_frames(corpus)?;
    let outcome = train_on_windows(&windows(&frames), train_fraction, &config).map_err(CliError::failed)?;
    outcome.model.save(out).map_err(|e| CliError::Failed(format!("{}: {e}", out.display())))?;
    if let Some(p) = float_out {
        outcome.float.save(p).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?;
    }
    match format {
        Format::Records => record(
            "train",
            json!({
                "frames": frames.len(),
                "train_windows": outcome.train_windows,
                "test_windows": outcome.test_windows,
                "activation_quantile": outcome.activation_quantile,
                "model": out,
            }),
        ),
        Format::Table => {
            println!(
                "{} frames, {} training windows, {} held out; activation quantile {}",
                frames.len(),
                outcome.train_windows,
                outcome.test_windows,
                outcome.activation_quantile
            );
            println!();
        }
    }
    print_outcome_metrics(format, "float reference (held out)", &outcome.float_metrics);
    print_outcome_metrics(format, "int4 model (held out)", &outcome.quant_metrics);
    if format == Format::Table {
        println!("model written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn quantise(float_path: &Path, out: &Path, calibrate: Option<&Path>, format: Format) -> Result<ExitCode> {
    let mut float = FloatMlp::load(float_path).map_err(|e| CliError::Validation(format!("{}: {e}", float_path.display())))?;
    let mut quantile = None;
    if let Some(c) = calibrate {
        let w = windows(&labelled_frames(c)?);
        let (q, _) = calibrate_quantised(&mut float, &w).map_err(CliError::failed)?;
        quantile = Some(q);
    }
    let (model, report) = quantise_model(&float, ACTIVATION_BITS).map_err(CliError::validation)?;
    model.save(out).map_err(|e| CliError::Failed(format!("{}: {e}", out.display())))?;
    match format {
        Format::Records => {
            let mut v = to_json(&report);
            v["activation_quantile"] = json!(quantile);
            v["model"] = json!(out);
            record("quantise", v);
        }
        Format::Table => {
            if let Some(q) = quantile {
                println!("activation quantile {q}");
            }
            println!("{:<6} {:>14} {:>16} {:>16}", "layer", "weight scale", "max weight err", "act scale");
            for (i, (s, e)) in report.weight_scales.iter().zip(&report.max_weight_error).enumerate() {
                let a = report.activation_scales.get(i).map_or("-".to_string(), |a| format!("{a:.6}"));
                println!("{i:<6} {s:>14.6} {e:>16.6} {a:>16}");
            }
            println!("model written to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(truth: &Path, model: Option<&Path>, predictions: Option<&Path>, format: Format) -> Result<ExitCode> {
    let frames = labelled_frames(truth)?;
    let (name, report) = match (model, predictions) {
        (Some(m), _) => {
            let model = QuantMlpModel::load(m).map_err(|e| CliError::Validation(format!("{}: {e}", m.display())))?;
            let w = windows(&frames);
            (m.display().to_string(), evaluate_windows(&model, &w).map_err(CliError::failed)?)
        }
        (None, Some(p)) => {
            let predicted = load_replay(p, &ReplayOptions::default())
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            (p.display().to_string(), score_predictions(&frames, &predicted.records)?)
        }
        (None, None) => return Err(CliError::Validation("give --model or --predictions".into())),
    };
    print_outcome_metrics(format, &name, &report);
    Ok(ExitCode::SUCCESS)
}

/// Compare per-frame labels; both traces must carry the same frames.
fn score_predictions(truth: &[(CanFrame, TrafficClass)], predicted: &[ReplayRecord]) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(CliError::Validation(format!(
            "predictions hold {} records, ground truth {}",
            predicted.len(),
            truth.len()
        )));
    }
    if let Some(i) = truth.iter().zip(predicted).position(|((f, _), p)| *f != p.frame) {
        return Err(CliError::Validation(format!("record {} differs between the two traces", i + 1)));
    }
    Ok(compute_metrics(truth.iter().zip(predicted).map(|((_, t), p)| (*t, p.label))))
}

fn read_json(dir: &Path, name: &str) -> Result<Value> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn report(dir: &Path, format: Format) -> Result<ExitCode> {
    let summary = read_json(dir, "summary.json")?;
    let expectations = read_json(dir, "expectations.json")?;
    let metrics = read_json(dir, "metrics.json")?;
    let latency = read_json(dir, "latency.json")?;
    let passed = summary["passed"].as_bool().unwrap_or(false);
    match format {
        Format::Records => {
            record("summary", summary);
            for e in expectations.as_array().into_iter().flatten() {
                record("expectation", e.clone());
            }
            for m in metrics.as_array().into_iter().flatten() {
                record("metrics", m.clone());
            }
            record("latency", latency);
        }
        Format::Table => {
            println!(
                "scenario {}  seed {}  bitrate {}  stop {} ms",
                summary["name"].as_str().unwrap_or("?"),
                summary["seed"],
                summary["bitrate"],
                summary["stop_ms"]
            );
            println!();
            for e in expectations.as_array().into_iter().flatten() {
                let mark = if e["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
                println!(
                    "{mark} [{}] {} ({})",
                    e["index"],
                    e["description"].as_str().unwrap_or(""),
                    e["detail"].as_str().unwrap_or("")
                );
            }
            println!();
            for m in metrics.as_array().into_iter().flatten() {
                let report: MetricsReport = serde_json::from_value(m.clone()).map_err(CliError::validation)?;
                if report.total > 0 {
                    metrics_table(m["strategy"].as_str().unwrap_or("?"), &report);
                }
            }
            let rows: Vec<LatencySummary> =
                serde_json::from_value(latency["strategies"].clone()).map_err(CliError::validation)?;
            latency_table(&rows);
            println!(
                "{} of {} expectations passed",
                summary["expectations_passed"], summary["expectations_total"]
            );
        }
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

