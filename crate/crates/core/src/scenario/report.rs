use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{Scenario, ScriptAction};
use super::expect::ExpectationResult;
use super::ScenarioError;
use crate::attack::{tag_known_attacks, AttackProfile, KnownTag};
use crate::class::TrafficClass;
use crate::ids::{windows_from_trace, LabeledWindow, Strategy};
use crate::monitor::{compute_metrics, export_csv, export_vcd, BusLogRecord, LatencySummary, MetricsReport};
use crate::sim::{CaptureConfig, RunStats, Simulation};
use crate::time::SimTime;

/// Capture window used when a scenario does not configure one.
pub const DEFAULT_CAPTURE_MS: f64 = 20.0;

/// A finished run and its evaluated expectations.
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub sim: Simulation,
    pub results: Vec<ExpectationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub bitrate: u32,
    pub stop_ms: f64,
    pub stats: RunStats,
    pub warnings: Vec<String>,
    pub passed: bool,
    pub expectations_passed: usize,
    pub expectations_total: usize,
    /// Frames per ground-truth class.
    pub frames_by_class: BTreeMap<String, u64>,
    /// Threat verdicts per strategy.
    pub threat_verdicts: BTreeMap<String, u64>,
    /// Frames the rule-based flood tagger marks as DoS.
    pub dos_tagged: usize,
}

#[derive(Serialize)]
struct StrategyMetrics<'a> {
    strategy: Strategy,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

#[derive(Serialize)]
struct LatencyReport {
    strategies: Vec<LatencySummary>,
    /// Mean ECU-coupled latency over mean controller-coupled latency.
    ecu_over_controller: Option<f64>,
}

impl Scenario {
    pub fn build(&self) -> Result<Simulation, ScenarioError> {
        let mut cfg = self.sim_config()?;
        cfg.monitor.capture.get_or_insert(CaptureConfig {
            from_ms: 0.0,
            to_ms: DEFAULT_CAPTURE_MS.min(self.config.stop_ms),
            signals: None,
            max_samples: crate::monitor::DEFAULT_CAPTURE_SAMPLES,
        });
        let mut sim = Simulation::new(cfg)?;
        let b = self.config.bitrate;
        for (i, step) in self.config.script.iter().enumerate() {
            let action = step.action.to_action().map_err(|m| ScenarioError::Script { step: i, message: m })?;
            sim.schedule_action(SimTime(b.ticks_from_ms(step.at_ms)), i, action)?;
        }
        Ok(sim)
    }

    pub fn run(self) -> Result<ScenarioRun, ScenarioError> {
        let mut sim = self.build()?;
        sim.run_until(SimTime(self.config.bitrate.ticks_from_ms(self.config.stop_ms)))?;
        let results = self
            .config
            .expect
            .iter()
            .enumerate()
            .map(|(i, e)| e.evaluate(i, &self.config, &sim))
            .collect();
        Ok(ScenarioRun { scenario: self, sim, results })
    }

    /// Identifier flooded by the first scripted DoS attack.
    fn dos_id(&self) -> u16 {
        self.config
            .script
            .iter()
            .find_map(|s| match &s.action {
                ScriptAction::StartAttack { attack, .. } => match attack.profile {
                    AttackProfile::DosFlood { id, .. } => Some(id),
                    _ => None,
                },
                _ => None,
            })
            .unwrap_or(0)
    }
}

/// Sliding IDS windows over a bus log, labelled with ground truth.
pub fn corpus_windows(log: &[BusLogRecord]) -> Vec<LabeledWindow> {
    windows_from_trace(log.iter().map(|r| (&r.frame, r.label)))
}

fn ndjson<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, &it).expect("serialisable");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serialisable");
    s.push(b'\n');
    s
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn metrics(&self) -> Vec<(Strategy, MetricsReport)> {
        self.sim
            .strategies()
            .into_iter()
            .zip(self.sim.verdicts())
            .map(|(s, entries)| (s, compute_metrics(entries.iter().map(|e| (e.truth, e.verdict.class)))))
            .collect()
    }

    pub fn latency(&self) -> Vec<LatencySummary> {
        self.sim
            .strategies()
            .into_iter()
            .zip(self.sim.verdicts())
            .filter_map(|(s, entries)| {
                let samples: Vec<f64> = entries.iter().map(|e| e.verdict.latency.elapsed_us).collect();
                LatencySummary::from_samples(s, &samples)
            })
            .collect()
    }

    pub fn summary(&self) -> Summary {
        let c = &self.scenario.config;
        let log = self.sim.bus_log();
        let mut frames_by_class: BTreeMap<String, u64> = TrafficClass::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
        for r in log {
            *frames_by_class.entry(r.label.name().to_string()).or_default() += 1;
        }
        let threat_verdicts = self
            .sim
            .strategies()
            .into_iter()
            .zip(self.sim.verdicts())
            .map(|(s, v)| (s.name().to_string(), v.iter().filter(|e| e.verdict.class.is_attack()).count() as u64))
            .collect();
        let timed: Vec<(SimTime, _)> = log.iter().map(|r| (r.sof, r.frame.clone())).collect();
        let dos_tagged = tag_known_attacks(&timed, self.scenario.dos_id())
            .iter()
            .filter(|t| **t == KnownTag::Dos)
            .count();
        Summary {
            name: c.name.clone(),
            seed: c.seed,
            bitrate: c.bitrate.bits_per_sec(),
            stop_ms: c.stop_ms,
            stats: self.sim.stats(),
            warnings: self.sim.warnings().to_vec(),
            passed: self.passed(),
            expectations_passed: self.results.iter().filter(|r| r.passed).count(),
            expectations_total: self.results.len(),
            frames_by_class,
            threat_verdicts,
            dos_tagged,
        }
    }

    /// One line per expectation.
    pub fn expectation_table(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let mark = if r.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{mark} [{}] {} ({})", r.index, r.description, r.detail);
        }
        s
    }

    pub fn bundle(&self) -> Result<ReportBundle, ScenarioError> {
        let b = self.sim.bitrate();
        let mut files = BTreeMap::new();
        files.insert("bus.csv".into(), export_csv(self.sim.bus_log(), b).into_bytes());
        files.insert("bus_log.ndjson".into(), ndjson(self.sim.bus_log()));
        files.insert("status.ndjson".into(), ndjson(self.sim.status_log()));
        files.insert("verdicts.ndjson".into(), ndjson(self.sim.verdicts().iter().flatten()));
        if let Some(trace) = self.sim.capture() {
            let vcd = export_vcd(trace, b).map_err(|e| ScenarioError::Sim(e.into()))?;
            files.insert("capture.vcd".into(), vcd.into_bytes());
        }
        let metrics = self.metrics();
        let metrics: Vec<StrategyMetrics> = metrics.iter().map(|(s, r)| StrategyMetrics { strategy: *s, report: r }).collect();
        files.insert("metrics.json".into(), pretty(&metrics));
        let strategies = self.latency();
        let mean = |s: Strategy| strategies.iter().find(|l| l.strategy == s).map(|l| l.mean_us);
        let ratio = match (mean(Strategy::EcuCoupled), mean(Strategy::ControllerCoupled)) {
            (Some(e), Some(c)) if c > 0.0 => Some(e / c),
            _ => None,
        };
        files.insert("latency.json".into(), pretty(&LatencyReport { strategies, ecu_over_controller: ratio }));
        files.insert("expectations.json".into(), pretty(&self.results));
        files.insert("summary.json".into(), pretty(&self.summary()));
        Ok(ReportBundle { files })
    }
}

/// Named report files; identical runs give byte-identical bundles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBundle {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl ReportBundle {
    /// SHA-256 over all files in name order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, data) in &self.files {
            h.update(name.as_bytes());
            h.update([0]);
            h.update((data.len() as u64).to_le_bytes());
            h.update(data);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, data) in &self.files {
            std::fs::write(dir.join(name), data)?;
        }
        Ok(())
    }
}
