use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expect::Expectation;
use super::ScenarioError;
use crate::attack::AttackSpec;
use crate::attack::AttackProfile;
use crate::ecu::{default_messages, parse_sensor_value, BehaviorTable, EcuConfig};
use crate::ids::{CostProfile, QuantMlpModel, Strategy, PAPER_ARTIX7};
use crate::monitor::StatusCheck;
use crate::sim::{Action, CaptureConfig, IdsConfig, MonitorConfig, SimConfig};
use crate::time::Bitrate;

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Boolean, integer or word (`low`, `high`, `on`, `off`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Word(String),
}

impl Value {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Bool(b) => (*b).into(),
            Value::Int(i) => (*i).into(),
            Value::Word(s) => s.clone().into(),
        }
    }

    pub fn as_i64(&self) -> Result<i64, String> {
        match self {
            Value::Bool(b) => Ok(i64::from(*b)),
            Value::Int(i) => Ok(*i),
            Value::Word(_) => parse_sensor_value(&self.to_json()).map(i64::from).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySelect {
    Ecu,
    Controller,
    #[default]
    Both,
}

impl StrategySelect {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategySelect::Ecu => vec![Strategy::EcuCoupled],
            StrategySelect::Controller => vec![Strategy::ControllerCoupled],
            StrategySelect::Both => vec![Strategy::EcuCoupled, Strategy::ControllerCoupled],
        }
    }
}

impl std::str::FromStr for StrategySelect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ecu" | "ecu_coupled" => Ok(StrategySelect::Ecu),
            "controller" | "controller_coupled" => Ok(StrategySelect::Controller),
            "both" => Ok(StrategySelect::Both),
            _ => Err(format!("unknown strategy `{s}` (ecu, controller, both)")),
        }
    }
}

fn default_profile() -> String {
    PAPER_ARTIX7.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdsSection {
    /// Model file, relative to the scenario file.
    pub model: PathBuf,
    #[serde(default)]
    pub strategy: StrategySelect,
    /// Named calibration, or the name of an entry in `profiles`.
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub profiles: Vec<CostProfile>,
    #[serde(default)]
    pub host: Option<String>,
}

fn default_poll() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default = "default_poll")]
    pub poll_ms: f64,
    #[serde(default)]
    pub checks: Vec<StatusCheck>,
    #[serde(default)]
    pub capture: Option<CaptureConfig>,
}

impl Default for MonitorSection {
    fn default() -> Self {
        MonitorSection {
            poll_ms: default_poll(),
            checks: Vec::new(),
            capture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptAction {
    SetSensor { node: String, sensor: String, value: Value },
    StartAttack { attack: AttackSpec, #[serde(default)] name: Option<String> },
    StopAttack { name: String },
    ResetNode { #[serde(default)] node: Option<String> },
    ProgNode { node: String, behavior: BehaviorTable },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub at_ms: f64,
    #[serde(flatten)]
    pub action: ScriptAction,
}

/// Scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub bitrate: Bitrate,
    #[serde(default)]
    pub seed: u64,
    pub stop_ms: f64,
    /// Extra or overridden message ids.
    #[serde(default)]
    pub messages: BTreeMap<String, u16>,
    pub nodes: Vec<EcuConfig>,
    #[serde(default)]
    pub ids: Option<IdsSection>,
    #[serde(default)]
    pub monitor: MonitorSection,
    #[serde(default)]
    pub script: Vec<ScriptStep>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub bitrate: Option<Bitrate>,
    pub strategy: Option<StrategySelect>,
}

/// A validated scenario with its files resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub model: Option<Arc<QuantMlpModel>>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn messages(&self) -> BTreeMap<String, u16> {
        let mut m = default_messages();
        m.extend(self.messages.clone());
        m
    }

    /// Static checks that need no file access.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Validation(m));
        if self.format_version != SCENARIO_FORMAT_VERSION {
            return bad(format!(
                "unsupported format_version {} (expected {SCENARIO_FORMAT_VERSION})",
                self.format_version
            ));
        }
        if !(self.stop_ms.is_finite() && self.stop_ms >= 0.0) {
            return bad("stop_ms must be non-negative".into());
        }
        if self.nodes.is_empty() {
            return bad("scenario has no nodes".into());
        }
        if let Some((_, id)) = self.messages.iter().find(|(_, id)| **id > crate::can::MAX_STD_ID) {
            return bad(format!("message id {id:#x} exceeds 11 bits"));
        }
        let node = |n: &str| self.nodes.iter().find(|c| c.name == n);
        let mut started: Vec<&str> = Vec::new();
        let mut order: Vec<(usize, &ScriptStep)> = self.script.iter().enumerate().collect();
        order.sort_by(|a, b| a.1.at_ms.total_cmp(&b.1.at_ms).then(a.0.cmp(&b.0)));
        for (i, step) in order {
            let err = |m: String| Err(ScenarioError::Script { step: i, message: m });
            if !(step.at_ms.is_finite() && step.at_ms >= 0.0) {
                return err("at_ms must be non-negative".into());
            }
            match &step.action {
                ScriptAction::SetSensor { node: n, sensor, value } => {
                    let Some(cfg) = node(n) else { return err(format!("unknown node `{n}`")) };
                    let behavior = cfg.resolved_behavior().map_err(|e| ScenarioError::Validation(e.to_string()))?;
                    if !behavior.sensors.contains_key(sensor) {
                        return err(format!("node `{n}` has no sensor `{sensor}`"));
                    }
                    if let Err(e) = parse_sensor_value(&value.to_json()) {
                        return err(e.to_string());
                    }
                }
                ScriptAction::StartAttack { attack, name } => {
                    attack.profile.validate().map_err(|e| ScenarioError::Script { step: i, message: e.to_string() })?;
                    if let Some(n) = name {
                        started.push(n);
                    }
                }
                ScriptAction::StopAttack { name } => {
                    if !started.contains(&name.as_str()) {
                        return err(format!("no earlier start_attack named `{name}`"));
                    }
                }
                ScriptAction::ResetNode { node: Some(n) } | ScriptAction::ProgNode { node: n, .. } => {
                    if node(n).is_none() {
                        return err(format!("unknown node `{n}`"));
                    }
                }
                ScriptAction::ResetNode { node: None } => {}
            }
        }
        for (i, e) in self.expect.iter().enumerate() {
            e.validate(self).map_err(|m| ScenarioError::Validation(format!("expectation {i}: {m}")))?;
        }
        Ok(())
    }

    /// Resolved cost profiles for the selected strategies.
    pub fn cost_profiles(&self, ids: &IdsSection, select: StrategySelect) -> Result<Vec<CostProfile>, ScenarioError> {
        select
            .strategies()
            .into_iter()
            .map(|s| {
                ids.profiles
                    .iter()
                    .find(|p| p.name == ids.profile && p.strategy == s)
                    .cloned()
                    .or_else(|| CostProfile::named(&ids.profile, s))
                    .ok_or_else(|| {
                        ScenarioError::Validation(format!("no cost profile `{}` for {}", ids.profile, s.name()))
                    })
            })
            .collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::from_toml(&text, &base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        Scenario::from_config(ScenarioConfig::from_toml(text)?, base_dir)
    }

    /// Check the config and load the model it names.
    pub fn from_config(mut config: ScenarioConfig, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        config.validate()?;
        for step in &mut config.script {
            if let ScriptAction::StartAttack { attack, .. } = &mut step.action {
                if let AttackProfile::Replay { path, .. } = &mut attack.profile {
                    *path = resolve(base_dir, path);
                    if !path.is_file() {
                        return Err(ScenarioError::Io { path: path.clone(), message: "replay trace not found".into() });
                    }
                }
            }
        }
        let model = match &mut config.ids {
            Some(ids) => {
                ids.model = resolve(base_dir, &ids.model);
                let m = QuantMlpModel::load(&ids.model).map_err(|e| ScenarioError::Io {
                    path: ids.model.clone(),
                    message: e.to_string(),
                })?;
                Some(Arc::new(m))
            }
            None => None,
        };
        Ok(Scenario { config, base_dir: base_dir.to_path_buf(), model })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.config.seed = s;
        }
        if let Some(b) = o.bitrate {
            self.config.bitrate = b;
        }
        if let (Some(s), Some(ids)) = (o.strategy, self.config.ids.as_mut()) {
            ids.strategy = s;
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, ScenarioError> {
        let c = &self.config;
        let ids = match &c.ids {
            Some(section) => Some(IdsConfig {
                model: self.model.clone(),
                profiles: c.cost_profiles(section, section.strategy)?,
                host: section.host.clone(),
            }),
            None => None,
        };
        Ok(SimConfig {
            bitrate: c.bitrate,
            seed: c.seed,
            nodes: c.nodes.clone(),
            messages: c.messages(),
            ids,
            monitor: MonitorConfig {
                poll_ms: c.monitor.poll_ms,
                checks: c.monitor.checks.clone(),
                capture: c.monitor.capture.clone(),
            },
        })
    }
}

impl ScriptAction {
    pub fn to_action(&self) -> Result<Action, String> {
        Ok(match self {
            ScriptAction::SetSensor { node, sensor, value } => Action::SetSensor {
                node: node.clone(),
                sensor: sensor.clone(),
                value: parse_sensor_value(&value.to_json()).map_err(|e| e.to_string())?,
            },
            ScriptAction::StartAttack { attack, name } => Action::StartAttack { spec: attack.clone(), name: name.clone() },
            ScriptAction::StopAttack { name } => Action::StopAttack { name: name.clone() },
            ScriptAction::ResetNode { node } => Action::ResetNode { node: node.clone() },
            ScriptAction::ProgNode { node, behavior } => Action::ProgNode { node: node.clone(), behavior: behavior.clone() },
        })
    }
}
