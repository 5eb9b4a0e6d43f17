use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

pub const LIFE_SIGNAL_LOST: &str = "life signal lost";

/// One node's state at a poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub time: SimTime,
    pub node: String,
    /// Counter inside the ECU.
    pub life_counter: u32,
    /// Last counter value seen on the bus.
    pub observed_life: Option<u32>,
    /// Increase of the bus-observed counter since the previous poll.
    pub life_delta: i64,
    pub expected_delta: f64,
    pub actuators: BTreeMap<String, bool>,
    pub sensors: BTreeMap<String, u8>,
    pub error_count: u32,
    pub anomalies: Vec<String>,
}

impl StatusSnapshot {
    /// Numeric view of a named field, as used by [`StatusCheck`].
    pub fn signal(&self, name: &str) -> Option<i64> {
        match name {
            "life_counter" => Some(i64::from(self.life_counter)),
            "observed_life" => Some(self.observed_life.map_or(-1, i64::from)),
            "life_delta" => Some(self.life_delta),
            "error_count" => Some(i64::from(self.error_count)),
            _ => self
                .actuators
                .get(name)
                .map(|b| i64::from(*b))
                .or_else(|| self.sensors.get(name).map(|v| i64::from(*v))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

/// User-supplied condition flagged as an anomaly when it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusCheck {
    pub node: String,
    pub signal: String,
    pub op: CmpOp,
    pub value: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl StatusCheck {
    /// `Some(message)` when the condition holds on this snapshot.
    pub fn evaluate(&self, snap: &StatusSnapshot) -> Option<String> {
        if snap.node != self.node {
            return None;
        }
        let v = snap.signal(&self.signal)?;
        self.op.holds(v, self.value).then(|| {
            self.message
                .clone()
                .unwrap_or_else(|| format!("{} {} {} (is {v})", self.signal, self.op, self.value))
        })
    }
}

/// Remembers each node's bus-observed life counter between polls.
#[derive(Debug, Clone, Default)]
pub struct LifeTracker {
    last: BTreeMap<String, i64>,
}

impl LifeTracker {
    /// Delta since the previous poll plus any life-signal anomalies.
    /// A node starts as if value -1 had been observed.
    pub fn update(&mut self, node: &str, observed: Option<u32>, expected: f64) -> (i64, Vec<String>) {
        let now = observed.map_or(-1, i64::from);
        let prev = self.last.insert(node.to_string(), now).unwrap_or(-1);
        let delta = now - prev;
        let mut anomalies = Vec::new();
        if expected >= 1.0 {
            if delta == 0 {
                anomalies.push(LIFE_SIGNAL_LOST.to_string());
            } else if delta < 0 {
                anomalies.push("life counter restarted".to_string());
            } else if (delta as f64 - expected).abs() >= 1.0 {
                anomalies.push(format!("life rate deviation: +{delta}, expected +{expected}"));
            }
        }
        (delta, anomalies)
    }

    pub fn forget(&mut self, node: &str) {
        self.last.remove(node);
    }
}
