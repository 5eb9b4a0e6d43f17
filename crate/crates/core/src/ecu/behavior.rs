use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EcuError, EcuState, MSG_BRAKE, MSG_COLLISION, MSG_ENGINE, MSG_LIGHT};

/// How a sensor value becomes the first payload byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encode {
    Raw,
    /// 1 when the value is non-zero.
    NonZero,
    /// 1 when the value is below the threshold.
    Below(u8),
}

impl Encode {
    pub fn apply(self, v: u8) -> u8 {
        match self {
            Encode::Raw => v,
            Encode::NonZero => u8::from(v != 0),
            Encode::Below(t) => u8::from(v < t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Every control period.
    Cyclic,
    /// Only when the encoded payload differs from the last one sent.
    OnChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitRule {
    pub message: String,
    pub sensor: String,
    #[serde(default = "raw")]
    pub encode: Encode,
    #[serde(default = "on_change")]
    pub trigger: Trigger,
    /// Only emit while this actuator is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
    /// Payload sent while the gate is off; silent when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle: Option<u8>,
}

fn raw() -> Encode {
    Encode::Raw
}
fn on_change() -> Trigger {
    Trigger::OnChange
}

/// Predicate on a received payload's first byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Any,
    NonZero,
    Zero,
    Equals(u8),
}

impl Condition {
    pub fn matches(self, payload: &[u8]) -> bool {
        let b = payload.first().copied().unwrap_or(0);
        match self {
            Condition::Any => true,
            Condition::NonZero => b != 0,
            Condition::Zero => b == 0,
            Condition::Equals(v) => b == v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignValue {
    True,
    False,
    /// First payload byte is non-zero.
    Payload,
}

impl AssignValue {
    pub fn eval(self, payload: &[u8]) -> bool {
        match self {
            AssignValue::True => true,
            AssignValue::False => false,
            AssignValue::Payload => payload.first().is_some_and(|b| *b != 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assign {
    pub actuator: String,
    pub value: AssignValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactRule {
    pub message: String,
    #[serde(default = "any")]
    pub when: Condition,
    pub set: Vec<Assign>,
}

fn any() -> Condition {
    Condition::Any
}

/// Declarative ECU behaviour: sensors and actuators with initial values,
/// the messages produced from sensors, and the actuator updates triggered by
/// received messages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorTable {
    pub sensors: BTreeMap<String, u8>,
    pub actuators: BTreeMap<String, bool>,
    /// Actuators that stay `true` once set, until reset.
    pub latching: Vec<String>,
    pub emit: Vec<EmitRule>,
    pub react: Vec<ReactRule>,
}

fn names<const N: usize, V: Copy>(kv: [(&str, V); N]) -> BTreeMap<String, V> {
    kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn set(actuator: &str, value: AssignValue) -> Assign {
    Assign {
        actuator: actuator.to_string(),
        value,
    }
}

impl BehaviorTable {
    pub fn engine_brake() -> Self {
        BehaviorTable {
            sensors: names([("throttle", 32)]),
            emit: vec![EmitRule {
                message: MSG_ENGINE.into(),
                sensor: "throttle".into(),
                encode: Encode::Raw,
                trigger: Trigger::Cyclic,
                gate: Some("engine_enabled".into()),
                idle: Some(0),
            }],
            actuators: names([
                ("engine_enabled", true),
                ("tcu_enabled", true),
                ("braking_active", false),
            ]),
            react: vec![
                ReactRule {
                    message: MSG_COLLISION.into(),
                    when: Condition::NonZero,
                    set: vec![
                        set("engine_enabled", AssignValue::False),
                        set("tcu_enabled", AssignValue::False),
                    ],
                },
                ReactRule {
                    message: MSG_BRAKE.into(),
                    when: Condition::Any,
                    set: vec![set("braking_active", AssignValue::Payload)],
                },
            ],
            latching: Vec::new(),
        }
    }

    pub fn airbag_light() -> Self {
        BehaviorTable {
            sensors: names([("ambient_light", 255)]),
            actuators: names([("airbag_deployed", false)]),
            latching: vec!["airbag_deployed".into()],
            emit: vec![EmitRule {
                message: MSG_LIGHT.into(),
                sensor: "ambient_light".into(),
                encode: Encode::Below(128),
                trigger: Trigger::OnChange,
                gate: None,
                idle: None,
            }],
            react: vec![ReactRule {
                message: MSG_COLLISION.into(),
                when: Condition::NonZero,
                set: vec![set("airbag_deployed", AssignValue::True)],
            }],
        }
    }

    pub fn sensors() -> Self {
        BehaviorTable {
            sensors: names([("collision", 0), ("brake_pedal", 0)]),
            emit: vec![
                EmitRule {
                    message: MSG_COLLISION.into(),
                    sensor: "collision".into(),
                    encode: Encode::NonZero,
                    trigger: Trigger::OnChange,
                    gate: None,
                idle: None,
                },
                EmitRule {
                    message: MSG_BRAKE.into(),
                    sensor: "brake_pedal".into(),
                    encode: Encode::NonZero,
                    trigger: Trigger::Cyclic,
                    gate: None,
                idle: None,
                },
            ],
            ..Default::default()
        }
    }

    pub fn lights() -> Self {
        BehaviorTable {
            actuators: names([
                ("headlights", false),
                ("tail_lights", false),
                ("brake_lights", false),
            ]),
            react: vec![
                ReactRule {
                    message: MSG_LIGHT.into(),
                    when: Condition::Any,
                    set: vec![
                        set("headlights", AssignValue::Payload),
                        set("tail_lights", AssignValue::Payload),
                    ],
                },
                ReactRule {
                    message: MSG_BRAKE.into(),
                    when: Condition::Any,
                    set: vec![set("brake_lights", AssignValue::Payload)],
                },
            ],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EcuError> {
        let bad = |m: String| Err(EcuError::InvalidBehavior(m));
        for r in &self.emit {
            if !self.sensors.contains_key(&r.sensor) {
                return bad(format!("emit rule for {} reads unknown sensor `{}`", r.message, r.sensor));
            }
            if let Some(g) = r.gate.as_ref().filter(|g| !self.actuators.contains_key(*g)) {
                return bad(format!("emit rule for {} gated on unknown actuator `{g}`", r.message));
            }
        }
        for r in &self.react {
            for a in &r.set {
                if !self.actuators.contains_key(&a.actuator) {
                    return bad(format!("react rule for {} sets unknown actuator `{}`", r.message, a.actuator));
                }
            }
        }
        for l in &self.latching {
            if !self.actuators.contains_key(l) {
                return bad(format!("latching entry `{l}` is not an actuator"));
            }
        }
        let mut sent = std::collections::BTreeSet::new();
        for r in &self.emit {
            if !sent.insert(&r.message) {
                return bad(format!("message {} emitted by two rules", r.message));
            }
        }
        Ok(())
    }

    pub(super) fn initial_state(&self) -> EcuState {
        EcuState {
            life_counter: 0,
            actuators: self.actuators.clone(),
            sensors: self.sensors.clone(),
            error_count: 0,
            rx_count: 0,
        }
    }
}
