//! Virtual ECUs.
//!
//! An ECU runs two periodic tasks: a control task that turns sensor inputs
//! into CAN messages, and a life task that broadcasts an incrementing
//! counter. Received messages drive actuators. What an ECU does is a
//! declarative [`BehaviorTable`]; the four built-in roles are preset tables.

mod behavior;

pub use behavior::{
    Assign, AssignValue, BehaviorTable, Condition, EmitRule, Encode, ReactRule, Trigger,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::can::CanFrame;

pub const MSG_COLLISION: &str = "COLLISION";
pub const MSG_BRAKE: &str = "BRAKE";
pub const MSG_LIGHT: &str = "LIGHT";
pub const MSG_ENGINE: &str = "ENGINE";
pub const MSG_LIFE: &str = "LIFE";

pub const ID_COLLISION: u16 = 0x050;
pub const ID_BRAKE: u16 = 0x0A0;
pub const ID_ENGINE: u16 = 0x0C0;
pub const ID_LIGHT: u16 = 0x120;
pub const LIFE_BASE_ID: u16 = 0x300;

/// Functional message map shared by the built-in roles.
pub fn default_messages() -> BTreeMap<String, u16> {
    [
        (MSG_COLLISION, ID_COLLISION),
        (MSG_BRAKE, ID_BRAKE),
        (MSG_ENGINE, ID_ENGINE),
        (MSG_LIGHT, ID_LIGHT),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum EcuError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no sensor `{sensor}`")]
    UnknownSensor { node: String, sensor: String },
    #[error("bad sensor value: {0}")]
    BadValue(String),
    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Engine and brake control.
    EngineBrake,
    /// Airbag actuator plus ambient light sensor.
    AirbagLight,
    /// Brake pedal and collision sensors.
    Sensors,
    /// Head, tail and brake lights.
    Lights,
    /// Hosts the intrusion detector; only emits its life signal.
    IdsNode,
    Custom,
}

impl Role {
    pub fn default_behavior(self) -> Option<BehaviorTable> {
        Some(match self {
            Role::EngineBrake => BehaviorTable::engine_brake(),
            Role::AirbagLight => BehaviorTable::airbag_light(),
            Role::Sensors => BehaviorTable::sensors(),
            Role::Lights => BehaviorTable::lights(),
            Role::IdsNode => BehaviorTable::default(),
            Role::Custom => return None,
        })
    }
}

fn default_life_period() -> f64 {
    50.0
}
fn default_control_period() -> f64 {
    5.0
}
fn default_reaction() -> f64 {
    50.0
}

/// Scenario-level description of one ECU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcuConfig {
    pub name: String,
    pub role: Role,
    /// Explicit behaviour; replaces the role preset when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<BehaviorTable>,
    /// Life-signal identifier; defaults to `0x300 + position in roster`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub life_id: Option<u16>,
    #[serde(default = "default_life_period")]
    pub life_period_ms: f64,
    /// First life emission; defaults to a per-node stagger.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub life_offset_ms: Option<f64>,
    #[serde(default = "default_control_period")]
    pub control_period_ms: f64,
    /// Time from frame reception to actuator update.
    #[serde(default = "default_reaction")]
    pub reaction_us: f64,
}

impl EcuConfig {
    pub fn new(name: &str, role: Role) -> Self {
        EcuConfig {
            name: name.to_string(),
            role,
            behavior: None,
            life_id: None,
            life_period_ms: default_life_period(),
            life_offset_ms: None,
            control_period_ms: default_control_period(),
            reaction_us: default_reaction(),
        }
    }

    pub fn resolved_behavior(&self) -> Result<BehaviorTable, EcuError> {
        self.behavior
            .clone()
            .or_else(|| self.role.default_behavior())
            .ok_or_else(|| EcuError::InvalidBehavior(format!("Custom node `{}` needs a behavior table", self.name)))
    }

    pub fn resolved_life_id(&self, roster_index: usize) -> u16 {
        self.life_id.unwrap_or(LIFE_BASE_ID + roster_index as u16 + 1)
    }
}

/// Mutable runtime state of an ECU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcuState {
    pub life_counter: u32,
    pub actuators: BTreeMap<String, bool>,
    pub sensors: BTreeMap<String, u8>,
    pub error_count: u32,
    pub rx_count: u64,
}

/// Accepts `true`/`false`, integers 0-255, and `low`/`high`/`on`/`off`.
pub fn parse_sensor_value(v: &serde_json::Value) -> Result<u8, EcuError> {
    match v {
        serde_json::Value::Bool(b) => Ok(u8::from(*b)),
        serde_json::Value::Number(n) => n
            .as_u64()
            .and_then(|n| u8::try_from(n).ok())
            .ok_or_else(|| EcuError::BadValue(n.to_string())),
        serde_json::Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "low" | "off" | "false" => Ok(0),
            "high" => Ok(255),
            "on" | "true" => Ok(1),
            other => other.parse().map_err(|_| EcuError::BadValue(s.clone())),
        },
        other => Err(EcuError::BadValue(other.to_string())),
    }
}

/// Result of running one task or handling one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskOutput {
    pub frames: Vec<CanFrame>,
    pub actuator_changes: Vec<(String, bool)>,
}

/// One ECU with its resolved behaviour and live state.
#[derive(Debug, Clone)]
pub struct Ecu {
    pub config: EcuConfig,
    behavior: BehaviorTable,
    life_id: u16,
    /// Message name -> identifier for everything this node may send.
    tx_ids: BTreeMap<String, u16>,
    /// Identifier -> message name for everything this node reacts to.
    rx_names: BTreeMap<u16, String>,
    last_emitted: BTreeMap<String, u8>,
    state: EcuState,
}

impl Ecu {
    pub fn new(
        config: EcuConfig,
        roster_index: usize,
        messages: &BTreeMap<String, u16>,
    ) -> Result<Ecu, EcuError> {
        let behavior = config.resolved_behavior()?;
        behavior.validate()?;
        let lookup = |name: &str| {
            messages.get(name).copied().ok_or_else(|| {
                EcuError::InvalidBehavior(format!("node `{}` uses unknown message `{name}`", config.name))
            })
        };
        let mut tx_ids = BTreeMap::new();
        for r in &behavior.emit {
            tx_ids.insert(r.message.clone(), lookup(&r.message)?);
        }
        let life_id = config.resolved_life_id(roster_index);
        tx_ids.insert(MSG_LIFE.to_string(), life_id);
        let mut rx_names = BTreeMap::new();
        for r in &behavior.react {
            rx_names.insert(lookup(&r.message)?, r.message.clone());
        }
        let state = behavior.initial_state();
        Ok(Ecu {
            config,
            behavior,
            life_id,
            tx_ids,
            rx_names,
            last_emitted: BTreeMap::new(),
            state,
        })
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn state(&self) -> &EcuState {
        &self.state
    }

    pub fn behavior(&self) -> &BehaviorTable {
        &self.behavior
    }

    pub fn life_id(&self) -> u16 {
        self.life_id
    }

    pub fn tx_ids(&self) -> &BTreeMap<String, u16> {
        &self.tx_ids
    }

    /// Identifiers this node acts upon.
    pub fn rx_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.rx_names.keys().copied()
    }

    pub fn owns_id(&self, id: u16) -> bool {
        self.tx_ids.values().any(|&v| v == id)
    }

    pub fn set_sensor(&mut self, sensor: &str, value: u8) -> Result<(), EcuError> {
        match self.state.sensors.get_mut(sensor) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(EcuError::UnknownSensor {
                node: self.config.name.clone(),
                sensor: sensor.to_string(),
            }),
        }
    }

    /// Control task: evaluate emit rules against current sensor values.
    pub fn control_step(&mut self) -> TaskOutput {
        let mut out = TaskOutput::default();
        for rule in &self.behavior.emit {
            let gated = rule.gate.as_ref().is_some_and(|g| self.state.actuators.get(g) != Some(&true));
            let payload = match (gated, rule.idle) {
                (true, None) => continue,
                (true, Some(idle)) => idle,
                (false, _) => rule.encode.apply(self.state.sensors.get(&rule.sensor).copied().unwrap_or(0)),
            };
            let due = match rule.trigger {
                Trigger::Cyclic => true,
                Trigger::OnChange => {
                    let initial = self.behavior.sensors.get(&rule.sensor).copied().unwrap_or(0);
                    let prev = self
                        .last_emitted
                        .get(&rule.message)
                        .copied()
                        .unwrap_or_else(|| rule.encode.apply(initial));
                    prev != payload
                }
            };
            if due {
                self.last_emitted.insert(rule.message.clone(), payload);
                let id = self.tx_ids[&rule.message];
                out.frames.push(CanFrame::new(id, &[payload]).expect("valid id"));
            }
        }
        out
    }

    /// Life task: frame carries the current counter, then the counter
    /// advances.
    pub fn emit_life_signal(&mut self) -> CanFrame {
        let frame = CanFrame::new(self.life_id, &self.state.life_counter.to_be_bytes()).expect("valid id");
        self.state.life_counter = self.state.life_counter.wrapping_add(1);
        frame
    }

    /// Apply react rules for a received frame.
    pub fn receive(&mut self, frame: &CanFrame) -> TaskOutput {
        let mut out = TaskOutput::default();
        let Some(name) = self.rx_names.get(&frame.id()) else {
            return out;
        };
        self.state.rx_count += 1;
        for rule in self.behavior.react.iter().filter(|r| &r.message == name) {
            if !rule.when.matches(frame.payload()) {
                continue;
            }
            for a in &rule.set {
                let value = a.value.eval(frame.payload());
                let latched = self.behavior.latching.contains(&a.actuator)
                    && self.state.actuators.get(&a.actuator) == Some(&true);
                if latched {
                    continue;
                }
                if let Some(cur) = self.state.actuators.get_mut(&a.actuator) {
                    if *cur != value {
                        *cur = value;
                        out.actuator_changes.push((a.actuator.clone(), value));
                    }
                }
            }
        }
        out
    }

    pub fn record_error(&mut self) {
        self.state.error_count += 1;
    }

    /// Back to power-on state; clears latched actuators.
    pub fn reset(&mut self) -> Vec<(String, bool)> {
        let fresh = self.behavior.initial_state();
        let changes = fresh
            .actuators
            .iter()
            .filter(|(k, v)| self.state.actuators.get(*k) != Some(v))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        self.state = fresh;
        self.last_emitted.clear();
        changes
    }

    /// Swap in a new behaviour table and reset.
    pub fn reprogram(
        &mut self,
        behavior: BehaviorTable,
        messages: &BTreeMap<String, u16>,
    ) -> Result<Vec<(String, bool)>, EcuError> {
        let mut cfg = self.config.clone();
        cfg.behavior = Some(behavior);
        let roster_index = usize::from(self.life_id.saturating_sub(LIFE_BASE_ID + 1));
        let mut fresh = Ecu::new(cfg, roster_index, messages)?;
        fresh.life_id = self.life_id;
        fresh.tx_ids.insert(MSG_LIFE.to_string(), self.life_id);
        let changes: Vec<(String, bool)> = fresh
            .state
            .actuators
            .iter()
            .filter(|(k, v)| self.state.actuators.get(*k) != Some(v))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        *self = fresh;
        Ok(changes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ecu(role: Role, idx: usize) -> Ecu {
        Ecu::new(EcuConfig::new(&format!("ECU{}", idx + 1), role), idx, &default_messages()).unwrap()
    }

    #[test]
    fn collision_sensor_emits_collision() {
        let mut s = ecu(Role::Sensors, 2);
        assert!(s.control_step().frames.iter().all(|f| f.id() != ID_COLLISION));
        s.set_sensor("collision", 1).unwrap();
        let out = s.control_step();
        assert!(out.frames.iter().any(|f| f.id() == ID_COLLISION && f.payload() == [1]));
        // On-change: not repeated.
        assert!(s.control_step().frames.iter().all(|f| f.id() != ID_COLLISION));
    }

    #[test]
    fn airbag_latches_until_reset() {
        let mut a = ecu(Role::AirbagLight, 1);
        let hit = CanFrame::new(ID_COLLISION, &[1]).unwrap();
        let out = a.receive(&hit);
        assert_eq!(out.actuator_changes, vec![("airbag_deployed".to_string(), true)]);
        a.receive(&CanFrame::new(ID_COLLISION, &[0]).unwrap());
        assert!(a.state().actuators["airbag_deployed"]);
        a.reset();
        assert!(!a.state().actuators["airbag_deployed"]);
    }

    #[test]
    fn engine_disabled_on_collision() {
        let mut e = ecu(Role::EngineBrake, 0);
        e.receive(&CanFrame::new(ID_COLLISION, &[1]).unwrap());
        assert!(!e.state().actuators["engine_enabled"]);
        assert!(!e.state().actuators["tcu_enabled"]);
    }

    #[test]
    fn engine_status_idles_after_collision() {
        let mut e = ecu(Role::EngineBrake, 0);
        assert_eq!(e.control_step().frames, vec![CanFrame::new(ID_ENGINE, &[32]).unwrap()]);
        e.receive(&CanFrame::new(ID_COLLISION, &[1]).unwrap());
        assert_eq!(e.control_step().frames, vec![CanFrame::new(ID_ENGINE, &[0]).unwrap()]);
    }

    #[test]
    fn gated_rule_without_idle_is_silent() {
        let mut b = BehaviorTable::engine_brake();
        b.emit[0].idle = None;
        let mut e = Ecu::new(EcuConfig { behavior: Some(b), ..EcuConfig::new("E", Role::Custom) }, 0, &default_messages()).unwrap();
        e.receive(&CanFrame::new(ID_COLLISION, &[1]).unwrap());
        assert!(e.control_step().frames.is_empty());
    }

    #[test]
    fn brake_follows_payload() {
        let mut e = ecu(Role::EngineBrake, 0);
        e.receive(&CanFrame::new(ID_BRAKE, &[1]).unwrap());
        assert!(e.state().actuators["braking_active"]);
        e.receive(&CanFrame::new(ID_BRAKE, &[0]).unwrap());
        assert!(!e.state().actuators["braking_active"]);
    }

    #[test]
    fn low_ambient_light_emits_light_on() {
        let mut a = ecu(Role::AirbagLight, 1);
        a.set_sensor("ambient_light", parse_sensor_value(&serde_json::json!("low")).unwrap()).unwrap();
        let f = a.control_step().frames;
        assert_eq!(f, vec![CanFrame::new(ID_LIGHT, &[1]).unwrap()]);
        let mut l = ecu(Role::Lights, 3);
        let out = l.receive(&f[0]);
        assert!(out.actuator_changes.contains(&("headlights".to_string(), true)));
        assert!(out.actuator_changes.contains(&("tail_lights".to_string(), true)));
    }

    #[test]
    fn life_counter_sequence() {
        let mut e = ecu(Role::Lights, 3);
        assert_eq!(e.life_id(), 0x304);
        assert_eq!(e.emit_life_signal().payload(), &0u32.to_be_bytes());
        assert_eq!(e.emit_life_signal().payload(), &1u32.to_be_bytes());
        e.reset();
        assert_eq!(e.state().life_counter, 0);
    }

    #[test]
    fn unknown_sensor() {
        let mut e = ecu(Role::Lights, 3);
        assert_eq!(
            e.set_sensor("collision", 1),
            Err(EcuError::UnknownSensor { node: "ECU4".into(), sensor: "collision".into() })
        );
    }

    #[test]
    fn custom_needs_behavior() {
        assert!(Ecu::new(EcuConfig::new("X", Role::Custom), 0, &default_messages()).is_err());
    }

    #[test]
    fn sensor_value_forms() {
        use serde_json::json;
        assert_eq!(parse_sensor_value(&json!(true)), Ok(1));
        assert_eq!(parse_sensor_value(&json!("high")), Ok(255));
        assert_eq!(parse_sensor_value(&json!(17)), Ok(17));
        assert!(parse_sensor_value(&json!(300)).is_err());
        assert!(parse_sensor_value(&json!("dim")).is_err());
    }
}
