#![no_main]

use cantestbed_service::protocol::*;
use libfuzzer_sys::fuzz_target;
use serde_json::Value;

fuzz_target!(|data: &[u8]| {
    let Ok(req) = serde_json::from_slice::<Request>(data) else { return };
    let Some(op) = Op::parse(&req.op) else { return };
    let a = &req.args;
    let _ = match op {
        Op::SysCtrl => parse_args::<SysCtrlArgs>(a).map(|_| ()),
        Op::AttCtrl => parse_required::<AttCtrlArgs>(a).map(|_| ()),
        Op::ProgNode => parse_required::<ProgNodeArgs>(a).map(|_| ()),
        Op::ResetNode => parse_args::<ResetNodeArgs>(a).map(|_| ()),
        Op::DebugConfig => parse_args::<DebugConfigArgs>(a).map(|_| ()),
        Op::Monitor | Op::BusLog => parse_args::<SubscribeArgs>(a).map(|_| ()),
        Op::SignalCapture => parse_args::<SignalCaptureArgs>(a).map(|_| ()),
        Op::UserCapture => parse_args::<UserCaptureArgs>(a).map(|_| ()),
        Op::LoadScenario => parse_args::<LoadScenarioArgs>(a).map(|_| ()),
        Op::Run => parse_args::<RunArgs>(a).map(|_| ()),
        Op::Pause => Ok(()),
        Op::Step => parse_args::<StepArgs>(a).map(|_| ()),
    };
    let reply = Response::err(req.id, ErrorCode::BadRequest, "x");
    let line = serde_json::to_string(&reply).expect("serialisable");
    assert!(serde_json::from_str::<Value>(&line).is_ok());
});
