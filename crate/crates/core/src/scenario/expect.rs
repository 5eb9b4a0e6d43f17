use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, Value};
use crate::class::TrafficClass;
use crate::sim::Simulation;
use crate::time::SimTime;

fn default_within() -> f64 {
    10.0
}

fn default_min_count() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// True at some instant of the window.
    #[default]
    Reaches,
    /// True over the whole window.
    Holds,
    /// False over the whole window.
    Never,
}

/// `[start, start + within_ms]`, where start is a script step's time or
/// an absolute `at_ms` (0 when neither is given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_ms: Option<f64>,
    #[serde(default = "default_within")]
    pub within_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Expectation {
    Signal {
        node: String,
        signal: String,
        value: Value,
        #[serde(default)]
        mode: Mode,
        #[serde(flatten)]
        window: Window,
    },
    /// Threat verdicts from every configured strategy.
    IdsThreat {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class: Option<TrafficClass>,
        #[serde(default = "default_min_count")]
        min_count: u64,
        #[serde(default)]
        mode: Mode,
        #[serde(flatten)]
        window: Window,
    },
    Anomaly {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<String>,
        contains: String,
        #[serde(default)]
        mode: Mode,
        #[serde(flatten)]
        window: Window,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub index: usize,
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

impl Window {
    fn validate(&self, config: &ScenarioConfig) -> Result<(), String> {
        if self.after_step.is_some() && self.at_ms.is_some() {
            return Err("give either after_step or at_ms, not both".into());
        }
        if let Some(s) = self.after_step.filter(|s| *s >= config.script.len()) {
            return Err(format!("after_step {s} is out of range"));
        }
        if !(self.within_ms.is_finite() && self.within_ms >= 0.0) {
            return Err("within_ms must be non-negative".into());
        }
        if self.at_ms.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
            return Err("at_ms must be non-negative".into());
        }
        Ok(())
    }

    fn start_ms(&self, config: &ScenarioConfig) -> f64 {
        match (self.after_step, self.at_ms) {
            (Some(s), _) => config.script[s].at_ms,
            (None, Some(t)) => t,
            (None, None) => 0.0,
        }
    }

    fn bounds(&self, config: &ScenarioConfig) -> (SimTime, SimTime) {
        let start = self.start_ms(config);
        let b = config.bitrate;
        (SimTime(b.ticks_from_ms(start)), SimTime(b.ticks_from_ms(start + self.within_ms)))
    }

    fn describe(&self, config: &ScenarioConfig) -> String {
        let start = self.start_ms(config);
        format!("[{start} ms, {} ms]", start + self.within_ms)
    }
}

impl Mode {
    fn word(self) -> &'static str {
        match self {
            Mode::Reaches => "reaches",
            Mode::Holds => "holds",
            Mode::Never => "never",
        }
    }
}

impl Expectation {
    pub fn window(&self) -> &Window {
        match self {
            Expectation::Signal { window, .. }
            | Expectation::IdsThreat { window, .. }
            | Expectation::Anomaly { window, .. } => window,
        }
    }

    pub(super) fn validate(&self, config: &ScenarioConfig) -> Result<(), String> {
        self.window().validate(config)?;
        let node_exists = |n: &str| config.nodes.iter().any(|c| c.name == n);
        match self {
            Expectation::Signal { node, signal, value, .. } => {
                let cfg = config
                    .nodes
                    .iter()
                    .find(|c| &c.name == node)
                    .ok_or_else(|| format!("unknown node `{node}`"))?;
                let b = cfg.resolved_behavior().map_err(|e| e.to_string())?;
                if signal != "life_counter" && !b.sensors.contains_key(signal) && !b.actuators.contains_key(signal) {
                    return Err(format!("node `{node}` has no signal `{signal}`"));
                }
                value.as_i64()?;
            }
            Expectation::IdsThreat { class, mode, .. } => {
                if config.ids.is_none() {
                    return Err("ids_threat needs an [ids] section".into());
                }
                if *class == Some(TrafficClass::Benign) {
                    return Err("Benign is not a threat class".into());
                }
                if *mode == Mode::Holds {
                    return Err("ids_threat supports reaches and never".into());
                }
            }
            Expectation::Anomaly { node, mode, .. } => {
                if let Some(n) = node.as_ref().filter(|n| !node_exists(n)) {
                    return Err(format!("unknown node `{n}`"));
                }
                if *mode == Mode::Holds {
                    return Err("anomaly supports reaches and never".into());
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, index: usize, config: &ScenarioConfig, sim: &Simulation) -> ExpectationResult {
        let (lo, hi) = self.window().bounds(config);
        let span = self.window().describe(config);
        let (description, passed, detail) = match self {
            Expectation::Signal { node, signal, value, mode, .. } => {
                let want = value.as_i64().unwrap_or(i64::MIN);
                let name = format!("{node}.{signal}");
                let history = sim.signal_log().get(&name).map(Vec::as_slice).unwrap_or(&[]);
                let seen = values_in(history, lo, hi);
                let hits = seen.iter().filter(|v| **v == want).count();
                let passed = match mode {
                    Mode::Reaches => hits > 0,
                    Mode::Holds => !seen.is_empty() && hits == seen.len(),
                    Mode::Never => hits == 0,
                };
                (
                    format!("{name} {} {want} in {span}", mode.word()),
                    passed,
                    format!("values seen {seen:?}"),
                )
            }
            Expectation::IdsThreat { class, min_count, mode, .. } => {
                let what = class.map_or("threat", TrafficClass::name);
                let counts: Vec<u64> = sim
                    .verdicts()
                    .iter()
                    .map(|entries| {
                        entries
                            .iter()
                            .filter(|e| {
                                let t = e.verdict.latency.verdict_time;
                                t >= lo && t <= hi && e.verdict.class.is_attack() && class.is_none_or(|c| e.verdict.class == c)
                            })
                            .count() as u64
                    })
                    .collect();
                let passed = !counts.is_empty()
                    && match mode {
                        Mode::Never => counts.iter().all(|c| *c == 0),
                        _ => counts.iter().all(|c| c >= min_count),
                    };
                let strategies: Vec<String> = sim
                    .strategies()
                    .iter()
                    .zip(&counts)
                    .map(|(s, c)| format!("{}={c}", s.name()))
                    .collect();
                let description = match mode {
                    Mode::Never => format!("no IDS {what} verdict in {span}"),
                    _ => format!("at least {min_count} IDS {what} verdicts in {span}"),
                };
                (description, passed, strategies.join(" "))
            }
            Expectation::Anomaly { node, contains, mode, .. } => {
                let hits: Vec<String> = sim
                    .status_log()
                    .iter()
                    .filter(|s| s.time >= lo && s.time <= hi && node.as_ref().is_none_or(|n| &s.node == n))
                    .flat_map(|s| s.anomalies.iter().filter(|a| a.contains(contains.as_str())).map(move |a| format!("{}: {a}", s.node)))
                    .collect();
                let passed = match mode {
                    Mode::Never => hits.is_empty(),
                    _ => !hits.is_empty(),
                };
                let who = node.as_deref().unwrap_or("any node");
                (
                    format!("anomaly `{contains}` on {who} {} in {span}", mode.word()),
                    passed,
                    format!("{} matching", hits.len()),
                )
            }
        };
        ExpectationResult { index, description, passed, detail }
    }
}

/// Values a piecewise-constant signal takes over `[lo, hi]`.
fn values_in(history: &[(SimTime, i64)], lo: SimTime, hi: SimTime) -> Vec<i64> {
    let mut out = Vec::new();
    if let Some(&(_, v)) = history.iter().rev().find(|(t, _)| *t <= lo) {
        out.push(v);
    }
    for &(t, v) in history {
        if t > lo && t <= hi {
            out.push(v);
        }
    }
    out
}
