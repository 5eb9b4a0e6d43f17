use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use cantestbed_service::{spawn, ServiceConfig, ServiceHandle};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn start(config: ServiceConfig) -> ServiceHandle {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    spawn(listener, config).unwrap()
}

fn start_default() -> ServiceHandle {
    start(ServiceConfig { root: repo(), ..Default::default() })
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
    /// Stream records seen while waiting for responses.
    records: Vec<Value>,
    token: Option<String>,
}

impl Client {
    fn connect(h: &ServiceHandle) -> Client {
        let s = TcpStream::connect(h.local_addr()).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        Client { reader: BufReader::new(s.try_clone().unwrap()), writer: s, next_id: 1, records: Vec::new(), token: None }
    }

    fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    fn read(&mut self) -> Option<Value> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(serde_json::from_str(&line).unwrap()),
        }
    }

    /// Next response; stream records are kept aside.
    fn response(&mut self) -> Value {
        loop {
            let v = self.read().expect("connection closed");
            if v.get("subscription").is_some() && v.get("ok").is_none() {
                self.records.push(v);
            } else {
                return v;
            }
        }
    }

    fn call(&mut self, op: &str, args: Value) -> Value {
        let id = self.next_id;
        self.next_id += 1;
        let mut req = json!({"id": id, "op": op, "args": args});
        if let Some(t) = &self.token {
            req["token"] = json!(t);
        }
        self.send_raw(&req.to_string());
        let r = self.response();
        assert_eq!(r["id"], json!(id), "{r}");
        r
    }

    fn ok(&mut self, op: &str, args: Value) -> Value {
        let r = self.call(op, args);
        assert_eq!(r["ok"], json!(true), "{op}: {r}");
        r["result"].clone()
    }
}

fn error_code(r: &Value) -> &str {
    r["error"]["code"].as_str().unwrap_or("")
}

#[test]
fn unknown_op_is_rejected() {
    let h = start_default();
    let mut c = Client::connect(&h);
    let r = c.call("sys_ctl", Value::Null);
    assert_eq!(r["ok"], json!(false));
    assert_eq!(error_code(&r), "UnknownOp");
    c.send_raw("not json");
    assert_eq!(error_code(&c.response()), "BadRequest");
    let r = c.call("att_ctrl", json!({"action": "start", "attack": {"kind": "Teleport"}}));
    assert_eq!(error_code(&r), "ValidationError");
    h.shutdown();
}

#[test]
fn sys_ctrl_reports_and_configures() {
    let h = start_default();
    let mut c = Client::connect(&h);
    let s = c.ok("sys_ctrl", Value::Null);
    assert_eq!(s["bitrate"], json!(500_000));
    assert_eq!(s["nodes"], json!(["ECU1", "ECU2", "ECU3", "ECU4", "ECU5"]));
    let s = c.ok("sys_ctrl", json!({"bitrate": 250000, "seed": 9}));
    assert_eq!(s["bitrate"], json!(250_000));
    assert_eq!(s["seed"], json!(9));
    c.ok("step", json!({"ms": 1.0}));
    let r = c.call("sys_ctrl", json!({"bitrate": 125000}));
    assert_eq!(error_code(&r), "ValidationError");
    let s = c.ok("sys_ctrl", json!({"bitrate": 125000, "restart": true}));
    assert_eq!(s["now_ms"], json!(0.0));
    h.shutdown();
}

#[test]
fn dos_attack_shows_in_bus_log() {
    let h = start_default();
    let mut c = Client::connect(&h);
    let sub = c.ok("bus_log", Value::Null)["subscription"].as_u64().unwrap();
    let a = c.ok("att_ctrl", json!({"action": "start", "attack": {"kind": "DosFlood"}}));
    let handle = a["handle"].as_u64().unwrap();
    assert_eq!(c.ok("att_ctrl", json!({"action": "list"}))[0]["handle"], json!(handle));
    c.ok("step", json!({"ms": 20.0}));
    c.ok("att_ctrl", json!({"action": "stop", "handle": handle}));
    // Responses and records share one ordered stream, so every record
    // from the step precedes the stop reply.
    let frames: Vec<&Value> = c.records.iter().filter(|r| r["subscription"] == json!(sub) && r["stream"] == "bus").collect();
    let dos = frames.iter().filter(|r| r["label"] == "DoS").count();
    // A flood of id 0 wins every arbitration.
    assert!(dos > 50 && dos * 10 >= frames.len() * 9, "{dos} of {}", frames.len());
    assert!(frames.iter().filter(|r| r["label"] == "DoS").all(|r| r["frame"]["id"] == json!(0)));
    h.shutdown();
}

#[test]
fn reprogrammed_node_deploys_airbag_on_collision() {
    let h = start_default();
    let mut c = Client::connect(&h);
    // Start from a node that has no airbag logic.
    c.ok("prog_node", json!({"node": "ECU2", "behavior": "lights"}));
    c.ok("prog_node", json!({"node": "ECU2", "behavior": "airbag_light"}));
    let sub = c.ok("user_capture", json!({"signals": ["ECU2.airbag_deployed"]}))["subscription"].clone();
    c.ok("step", json!({"ms": 5.0}));
    c.ok("prog_node", json!({"node": "ECU3", "sensors": {"collision": 1}}));
    c.ok("step", json!({"ms": 20.0}));
    let fired = c
        .records
        .iter()
        .any(|r| r["subscription"] == sub && r["name"] == "ECU2.airbag_deployed" && r["value"] == json!(1));
    assert!(fired, "{:?}", c.records);
    let r = c.call("prog_node", json!({"node": "ECU3", "sensors": {"radar": 1}}));
    assert_eq!(error_code(&r), "ValidationError");
    let r = c.call("user_capture", json!({"signals": ["ECU9.nothing"]}));
    assert_eq!(error_code(&r), "ValidationError");
    h.shutdown();
}

#[test]
fn token_is_required_when_configured() {
    let h = start(ServiceConfig { root: repo(), token: Some("s3cret".into()), ..Default::default() });
    let mut c = Client::connect(&h);
    assert_eq!(error_code(&c.call("sys_ctrl", Value::Null)), "AuthFailed");
    c.token = Some("wrong".into());
    assert_eq!(error_code(&c.call("sys_ctrl", Value::Null)), "AuthFailed");
    c.token = Some("s3cret".into());
    c.ok("sys_ctrl", Value::Null);
    // The session stays authenticated.
    c.token = None;
    c.ok("sys_ctrl", Value::Null);
    h.shutdown();
}

#[test]
fn second_writer_is_busy() {
    let h = start_default();
    let mut a = Client::connect(&h);
    let mut b = Client::connect(&h);
    a.ok("step", json!({"ms": 1.0}));
    assert_eq!(error_code(&b.call("reset_node", Value::Null)), "EngineBusy");
    // Read-only ops stay open to everyone.
    b.ok("monitor", Value::Null);
    drop(a);
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let r = b.call("reset_node", Value::Null);
        if r["ok"] == json!(true) {
            break;
        }
        assert!(Instant::now() < deadline, "writer role never released");
        std::thread::sleep(Duration::from_millis(20));
    }
    h.shutdown();
}

#[test]
fn batch_run_blocks_mutation_until_paused() {
    let h = start_default();
    let mut c = Client::connect(&h);
    let r = c.ok("run", json!({"until_ms": 3_000_000.0}));
    assert_eq!(r["running"], json!(true));
    assert_eq!(error_code(&c.call("reset_node", Value::Null)), "EngineBusy");
    let p = c.ok("pause", Value::Null);
    assert!(p["now_ms"].as_f64().unwrap() > 0.0);
    c.ok("reset_node", Value::Null);
    h.shutdown();
}

#[test]
fn waited_run_and_step() {
    let h = start_default();
    let mut c = Client::connect(&h);
    let r = c.ok("run", json!({"until_ms": 50.0, "wait": true}));
    assert_eq!(r["now_ms"], json!(50.0));
    assert_eq!(r["finished"], json!(true));
    assert!(r["stats"]["frames"].as_u64().unwrap() > 0, "{r}");
    let s = c.ok("step", Value::Null);
    assert!(s["now_ms"].as_f64().unwrap() > 50.0);
    let r = c.call("run", json!({"until_ms": 10.0}));
    assert_eq!(error_code(&r), "ValidationError");
    let r = c.ok("run", json!({"until_ms": 60.0, "speed": 1.0, "wait": true}));
    assert_eq!(r["now_ms"], json!(60.0));
    h.shutdown();
}

#[test]
fn load_scenario_and_capture_dump() {
    let h = start_default();
    let mut c = Client::connect(&h);
    let s = c.ok("load_scenario", json!({"path": "scenarios/collision-nominal.scenario", "seed": 5}));
    assert_eq!(s["scenario"], json!("collision-nominal"));
    assert_eq!(s["seed"], json!(5));
    assert_eq!(s["strategies"].as_array().unwrap().len(), 2);
    let monitor = c.ok("monitor", Value::Null)["subscription"].clone();
    c.ok("run", json!({"wait": true}));
    assert!(c.records.iter().any(|r| r["subscription"] == monitor && r["stream"] == "status"));
    let dbg = c.ok("debug_config", Value::Null);
    assert!(dbg["signals"].as_array().unwrap().iter().any(|s| s["name"] == "ECU2.airbag_deployed"));
    let vcd = c.ok("signal_capture", json!({"dump": true}))["vcd"].as_str().unwrap().to_string();
    assert!(vcd.contains("$timescale"));
    let r = c.call("load_scenario", json!({"path": "scenarios/missing.scenario"}));
    assert_eq!(error_code(&r), "ValidationError");
    let r = c.call("load_scenario", json!({"toml": "format_version = 1\nname = \"x\"\nstop_ms = 1\n"}));
    assert_eq!(error_code(&r), "ValidationError");
    h.shutdown();
}

#[test]
fn slow_subscriber_is_disconnected() {
    let h = start(ServiceConfig { root: repo(), outbox_capacity: 8, ..Default::default() });
    let mut c = Client::connect(&h);
    c.ok("bus_log", Value::Null);
    // Stop reading while a long run floods the outbox.
    c.send_raw(&json!({"id": 99, "op": "run", "args": {"until_ms": 2000.0}}).to_string());
    std::thread::sleep(Duration::from_millis(500));
    let mut saw = false;
    while let Some(v) = c.read() {
        if error_code(&v) == "SlowSubscriber" {
            saw = true;
        }
    }
    assert!(saw);
    h.shutdown();
}

#[test]
fn subscriptions_can_be_cancelled() {
    let h = start_default();
    let mut c = Client::connect(&h);
    let sub = c.ok("bus_log", Value::Null)["subscription"].as_u64().unwrap();
    c.ok("bus_log", json!({"cancel": sub}));
    c.ok("step", json!({"ms": 10.0}));
    c.ok("sys_ctrl", Value::Null);
    assert!(c.records.is_empty());
    assert_eq!(error_code(&c.call("bus_log", json!({"cancel": sub}))), "ValidationError");
    h.shutdown();
}

#[test]
fn websocket_session() {
    let h = start(ServiceConfig { root: repo(), token: Some("tok".into()), ..Default::default() });
    let url = format!("ws://{}/ws?token=tok", h.local_addr());
    let (mut ws, _) = tungstenite::connect(url).unwrap();
    let send = |ws: &mut tungstenite::WebSocket<_>, v: Value| ws.send(tungstenite::Message::Text(v.to_string())).unwrap();
    send(&mut ws, json!({"id": 1, "op": "bus_log"}));
    send(&mut ws, json!({"id": 2, "op": "step", "args": {"ms": 5.0}}));
    let mut frames = 0;
    let mut step_ok = false;
    while !step_ok {
        let msg = ws.read().unwrap();
        let v: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        if v["stream"] == "bus" {
            frames += 1;
        } else if v["id"] == json!(2) {
            assert_eq!(v["ok"], json!(true), "{v}");
            step_ok = true;
        }
    }
    assert!(frames > 0);
    send(&mut ws, json!({"id": 3, "op": "nope"}));
    let v: Value = serde_json::from_str(ws.read().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(error_code(&v), "UnknownOp");
    ws.close(None).unwrap();

    let bad = format!("ws://{}/ws", h.local_addr());
    let (mut ws, _) = tungstenite::connect(bad).unwrap();
    send(&mut ws, json!({"id": 1, "op": "sys_ctrl"}));
    let v: Value = serde_json::from_str(ws.read().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(error_code(&v), "AuthFailed");
    h.shutdown();
}

fn http_get(h: &ServiceHandle, path: &str) -> String {
    let mut s = TcpStream::connect(h.local_addr()).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut out = String::new();
    std::io::Read::read_to_string(&mut s, &mut out).unwrap();
    out
}

#[test]
fn static_files_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>panel</p>").unwrap();
    let h = start(ServiceConfig { root: repo(), static_dir: Some(dir.path().into()), ..Default::default() });
    let r = http_get(&h, "/");
    assert!(r.starts_with("HTTP/1.1 200"), "{r}");
    assert!(r.ends_with("<p>panel</p>"));
    assert!(http_get(&h, "/../Cargo.toml").starts_with("HTTP/1.1 404"));
    h.shutdown();
    let h = start_default();
    assert!(http_get(&h, "/").starts_with("HTTP/1.1 404"));
    h.shutdown();
}
