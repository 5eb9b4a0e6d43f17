//! Wire records. Every record is one JSON document on one line.
//!
//! Request:  `{"id": 7, "op": "att_ctrl", "args": {...}, "token": "..."}`
//! Response: `{"id": 7, "ok": true, "result": {...}}` or
//!           `{"id": 7, "ok": false, "error": {"code": "UnknownOp", "message": "..."}}`
//! Stream:   `{"subscription": 3, "stream": "bus", ...}`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use cantestbed::attack::AttackSpec;
use cantestbed::ecu::{BehaviorTable, Role};
use cantestbed::scenario::StrategySelect;
use cantestbed::sim::CaptureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    /// Not a JSON object, or missing fields.
    BadRequest,
    UnknownOp,
    ValidationError,
    /// Mutating command while a batch run is in progress, or from a
    /// session that is not the writer.
    EngineBusy,
    AuthFailed,
    /// Outbound buffer overflowed; the connection is closed.
    SlowSubscriber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Request {
    #[serde(default)]
    pub id: Value,
    pub op: String,
    #[serde(default)]
    pub args: Value,
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn ok(id: Value, result: Value) -> Response {
        Response { id, ok: true, result: Some(result), error: None }
    }

    pub fn err(id: Value, code: ErrorCode, message: impl Into<String>) -> Response {
        Response {
            id,
            ok: false,
            result: None,
            error: Some(ErrorBody { code, message: message.into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    SysCtrl,
    AttCtrl,
    ProgNode,
    ResetNode,
    DebugConfig,
    Monitor,
    BusLog,
    SignalCapture,
    UserCapture,
    LoadScenario,
    Run,
    Pause,
    Step,
}

impl Op {
    pub const ALL: [Op; 13] = [
        Op::SysCtrl,
        Op::AttCtrl,
        Op::ProgNode,
        Op::ResetNode,
        Op::DebugConfig,
        Op::Monitor,
        Op::BusLog,
        Op::SignalCapture,
        Op::UserCapture,
        Op::LoadScenario,
        Op::Run,
        Op::Pause,
        Op::Step,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::SysCtrl => "sys_ctrl",
            Op::AttCtrl => "att_ctrl",
            Op::ProgNode => "prog_node",
            Op::ResetNode => "reset_node",
            Op::DebugConfig => "debug_config",
            Op::Monitor => "monitor",
            Op::BusLog => "bus_log",
            Op::SignalCapture => "signal_capture",
            Op::UserCapture => "user_capture",
            Op::LoadScenario => "load_scenario",
            Op::Run => "run",
            Op::Pause => "pause",
            Op::Step => "step",
        }
    }

    pub fn parse(s: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|o| o.name() == s)
    }

    /// Ops that change simulation state and so need the writer role.
    /// Subscription ops only read.
    pub fn mutates(self) -> bool {
        !matches!(self, Op::Monitor | Op::BusLog | Op::SignalCapture | Op::UserCapture)
    }
}

/// Arguments shared by the subscription ops.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscribeArgs {
    /// End this subscription instead of opening one.
    #[serde(default)]
    pub cancel: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalCaptureArgs {
    #[serde(default)]
    pub cancel: Option<u64>,
    /// Return the configured capture window as VCD text instead of
    /// subscribing.
    #[serde(default)]
    pub dump: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserCaptureArgs {
    #[serde(default)]
    pub cancel: Option<u64>,
    #[serde(default)]
    pub signals: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SysCtrlArgs {
    #[serde(default)]
    pub bitrate: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub poll_ms: Option<f64>,
    #[serde(default)]
    pub strategy: Option<StrategySelect>,
    /// Allow rebuilding a simulation that has already advanced.
    #[serde(default)]
    pub restart: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttCtrlArgs {
    Start {
        attack: AttackSpec,
    },
    Stop {
        handle: u32,
    },
    List,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BehaviorArg {
    Role(Role),
    Table(BehaviorTable),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgNodeArgs {
    pub node: String,
    #[serde(default)]
    pub behavior: Option<BehaviorArg>,
    /// IDS model file to install in the detector.
    #[serde(default)]
    pub model: Option<String>,
    /// Sensor inputs to drive, applied after any new behavior.
    #[serde(default)]
    pub sensors: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetNodeArgs {
    #[serde(default)]
    pub node: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugConfigArgs {
    #[serde(default)]
    pub capture: Option<CaptureConfig>,
    #[serde(default)]
    pub clear: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadScenarioArgs {
    /// Scenario file on the service host.
    #[serde(default)]
    pub path: Option<String>,
    /// Inline scenario document; relative paths resolve against the
    /// service's scenario root.
    #[serde(default)]
    pub toml: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub bitrate: Option<u32>,
    #[serde(default)]
    pub strategy: Option<StrategySelect>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// Stop time; the scenario's stop time when absent.
    #[serde(default)]
    pub until_ms: Option<f64>,
    /// Virtual seconds per wall-clock second. Absent or zero runs as fast
    /// as possible as one batch.
    #[serde(default)]
    pub speed: Option<f64>,
    /// Reply only once the run has finished.
    #[serde(default)]
    pub wait: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepArgs {
    /// Advance by this much virtual time; otherwise to the next event.
    #[serde(default)]
    pub ms: Option<f64>,
}

/// Decode op arguments; `null` counts as an empty object.
pub fn parse_args<T: for<'de> Deserialize<'de> + Default>(v: &Value) -> Result<T, String> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| e.to_string())
}

/// Like [`parse_args`] for argument types without a default.
pub fn parse_required<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T, String> {
    serde_json::from_value(v.clone()).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn op_names_round_trip() {
        for op in Op::ALL {
            assert_eq!(Op::parse(op.name()), Some(op));
            assert_eq!(serde_json::to_value(op).unwrap(), json!(op.name()));
        }
        assert_eq!(Op::parse("sys_ctl"), None);
    }

    #[test]
    fn error_response_shape() {
        let r = Response::err(json!(4), ErrorCode::UnknownOp, "no");
        assert_eq!(
            serde_json::to_value(&r).unwrap(),
            json!({"id": 4, "ok": false, "error": {"code": "UnknownOp", "message": "no"}})
        );
    }

    #[test]
    fn att_ctrl_forms() {
        let a: AttCtrlArgs = parse_required(&json!({"action": "start", "attack": {"kind": "DosFlood"}})).unwrap();
        assert!(matches!(a, AttCtrlArgs::Start { .. }));
        let a: AttCtrlArgs = parse_required(&json!({"action": "stop", "handle": 2})).unwrap();
        assert!(matches!(a, AttCtrlArgs::Stop { handle: 2 }));
    }

    #[test]
    fn behavior_by_role_or_table() {
        let p: ProgNodeArgs = parse_required(&json!({"node": "ECU2", "behavior": "airbag_light"})).unwrap();
        assert!(matches!(p.behavior, Some(BehaviorArg::Role(Role::AirbagLight))));
        let p: ProgNodeArgs = parse_required(&json!({"node": "ECU2", "behavior": {"sensors": {"x": 0}}})).unwrap();
        assert!(matches!(p.behavior, Some(BehaviorArg::Table(_))));
        let p: ProgNodeArgs = parse_required(&json!({"node": "ECU3", "sensors": {"collision": 1}})).unwrap();
        assert_eq!(p.sensors["collision"], 1);
    }

    #[test]
    fn null_args_default() {
        let r: RunArgs = parse_args(&Value::Null).unwrap();
        assert!(!r.wait);
        assert!(parse_args::<RunArgs>(&json!({"bogus": 1})).is_err());
    }
}
