use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use cantestbed::attack::AttackHandle;
use cantestbed::ecu::{EcuConfig, Role};
use cantestbed::ids::QuantMlpModel;
use cantestbed::monitor::export_vcd;
use cantestbed::scenario::{MonitorSection, Overrides, Scenario, ScenarioConfig, SCENARIO_FORMAT_VERSION};
use cantestbed::sim::{Notification, Simulation};
use cantestbed::{Bitrate, SimTime};

use crate::protocol::*;

/// Virtual time advanced between command checks in a batch run.
const BATCH_CHUNK_MS: f64 = 5.0;
/// Wall-clock pacing interval for paced runs.
const PACE_INTERVAL: Duration = Duration::from_millis(5);

/// Bounded outbound line queue of one connection.
#[derive(Clone)]
pub struct Outbox {
    tx: SyncSender<String>,
    overflow: Arc<AtomicBool>,
}

impl Outbox {
    pub fn new(tx: SyncSender<String>, overflow: Arc<AtomicBool>) -> Outbox {
        Outbox { tx, overflow }
    }

    /// False when the line could not be queued; a full queue also raises
    /// the overflow flag.
    pub(crate) fn send(&self, line: String) -> bool {
        match self.tx.try_send(line) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                self.overflow.store(true, Ordering::SeqCst);
                false
            }
            Err(TrySendError::Disconnected(_)) => false,
        }
    }

    fn respond(&self, r: &Response) -> bool {
        self.send(serde_json::to_string(r).expect("serialisable"))
    }
}

pub enum EngineMsg {
    Command { conn: u64, id: Value, op: Op, args: Value, out: Outbox },
    Disconnect { conn: u64 },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
enum SubKind {
    Monitor,
    BusLog,
    Signals,
    User(BTreeSet<String>),
}

struct Sub {
    conn: u64,
    kind: SubKind,
    out: Outbox,
}

struct RunState {
    until: SimTime,
    /// `None` for a batch run.
    speed: Option<f64>,
    wall_start: Instant,
    sim_start: SimTime,
    waiter: Option<(Value, Outbox)>,
}

type Reply = Result<Value, (ErrorCode, String)>;

fn invalid(e: impl ToString) -> (ErrorCode, String) {
    (ErrorCode::ValidationError, e.to_string())
}

/// Built-in network used until a scenario is loaded: the four functional
/// ECUs plus an IDS node, no detector model.
pub fn default_scenario() -> ScenarioConfig {
    let mut nodes: Vec<EcuConfig> = cantestbed::sim::SimConfig::functional_roster();
    nodes.push(EcuConfig::new("ECU5", Role::IdsNode));
    ScenarioConfig {
        format_version: SCENARIO_FORMAT_VERSION,
        name: "default".into(),
        description: None,
        bitrate: Bitrate::default(),
        seed: 0,
        stop_ms: 3_600_000.0,
        messages: BTreeMap::new(),
        nodes,
        ids: None,
        monitor: MonitorSection::default(),
        script: Vec::new(),
        expect: Vec::new(),
    }
}

pub struct Engine {
    scenario: Scenario,
    sim: Simulation,
    root: PathBuf,
    subs: BTreeMap<u64, Sub>,
    next_sub: u64,
    writer: Option<u64>,
    run: Option<RunState>,
    warnings_sent: usize,
}

fn resolve(root: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

impl Engine {
    pub fn new(scenario: Scenario, root: PathBuf) -> Result<Engine, String> {
        let sim = build(&scenario)?;
        Ok(Engine {
            scenario,
            sim,
            root,
            subs: BTreeMap::new(),
            next_sub: 1,
            writer: None,
            run: None,
            warnings_sent: 0,
        })
    }

    /// Serve commands until shutdown or until every sender is gone.
    pub fn run_loop(mut self, rx: Receiver<EngineMsg>) {
        loop {
            let msg = match &self.run {
                None => match rx.recv() {
                    Ok(m) => Some(m),
                    Err(_) => return,
                },
                Some(r) if r.speed.is_none() => rx.try_recv().ok(),
                Some(_) => match rx.recv_timeout(PACE_INTERVAL) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return,
                },
            };
            if let Some(m) = msg {
                if !self.handle(m) {
                    return;
                }
                // Drain what else is queued before advancing.
                while let Ok(m) = rx.try_recv() {
                    if !self.handle(m) {
                        return;
                    }
                }
            }
            if self.run.is_some() {
                self.advance();
            }
            self.fan_out();
        }
    }

    fn handle(&mut self, msg: EngineMsg) -> bool {
        match msg {
            EngineMsg::Shutdown => return false,
            EngineMsg::Disconnect { conn } => self.drop_conn(conn),
            EngineMsg::Command { conn, id, op, args, out } => {
                let reply = self.dispatch(conn, &id, op, &args, &out);
                // Records caused by the command go out ahead of its reply.
                self.fan_out();
                if let Some(reply) = reply {
                    let r = match reply {
                        Ok(v) => Response::ok(id, v),
                        Err((code, m)) => Response::err(id, code, m),
                    };
                    if !out.respond(&r) {
                        self.drop_conn(conn);
                    }
                }
            }
        }
        true
    }

    fn drop_conn(&mut self, conn: u64) {
        self.subs.retain(|_, s| s.conn != conn);
        if self.writer == Some(conn) {
            self.writer = None;
        }
    }

    /// `None` when the reply is deferred until a waited run finishes.
    fn dispatch(&mut self, conn: u64, id: &Value, op: Op, args: &Value, out: &Outbox) -> Option<Reply> {
        if op.mutates() {
            if let Some(w) = self.writer.filter(|w| *w != conn) {
                return Some(Err((ErrorCode::EngineBusy, format!("session {w} holds the writer role"))));
            }
            let batch = self.run.as_ref().is_some_and(|r| r.speed.is_none());
            if batch && op != Op::Pause {
                return Some(Err((ErrorCode::EngineBusy, "batch run in progress; send pause first".into())));
            }
            self.writer = Some(conn);
        }
        Some(match op {
            Op::SysCtrl => self.sys_ctrl(args),
            Op::AttCtrl => self.att_ctrl(args),
            Op::ProgNode => self.prog_node(args),
            Op::ResetNode => parse_args::<ResetNodeArgs>(args)
                .map_err(invalid)
                .and_then(|a| self.sim.reset_node(a.node.as_deref()).map_err(invalid))
                .map(|_| json!({"now_ms": self.now_ms()})),
            Op::DebugConfig => self.debug_config(args),
            Op::Monitor => self.subscribe(conn, args, SubKind::Monitor, out),
            Op::BusLog => self.subscribe(conn, args, SubKind::BusLog, out),
            Op::SignalCapture => self.signal_capture(conn, args, out),
            Op::UserCapture => self.user_capture(conn, args, out),
            Op::LoadScenario => self.load_scenario(args),
            Op::Run => return self.start_run(id, args, out),
            Op::Pause => Ok(self.pause()),
            Op::Step => self.step(args),
        })
    }

    fn now_ms(&self) -> f64 {
        self.sim.now().as_millis(self.sim.bitrate())
    }

    fn state(&self) -> Value {
        let attacks: Vec<Value> = self
            .sim
            .active_attacks()
            .into_iter()
            .map(|(h, k)| json!({"handle": h.0, "kind": k}))
            .collect();
        json!({
            "scenario": self.scenario.config.name,
            "now_ms": self.now_ms(),
            "bitrate": self.sim.bitrate().bits_per_sec(),
            "seed": self.scenario.config.seed,
            "stop_ms": self.scenario.config.stop_ms,
            "poll_ms": self.scenario.config.monitor.poll_ms,
            "running": self.run.is_some(),
            "nodes": self.sim.ecus().iter().map(|e| e.name()).collect::<Vec<_>>(),
            "strategies": self.sim.strategies().iter().map(|s| s.name()).collect::<Vec<_>>(),
            "stats": self.sim.stats(),
            "attacks": attacks,
        })
    }

    fn replace(&mut self, scenario: Scenario) -> Reply {
        let sim = build(&scenario).map_err(invalid)?;
        self.end_run(json!({"superseded": true}));
        self.scenario = scenario;
        self.sim = sim;
        self.warnings_sent = 0;
        Ok(self.state())
    }

    fn sys_ctrl(&mut self, args: &Value) -> Reply {
        let a: SysCtrlArgs = parse_args(args).map_err(invalid)?;
        let changes = a.bitrate.is_some() || a.seed.is_some() || a.poll_ms.is_some() || a.strategy.is_some();
        if !changes {
            return Ok(self.state());
        }
        if self.sim.now() > SimTime::ZERO && !a.restart {
            return Err(invalid("configuration is fixed once time has advanced; pass restart = true"));
        }
        let mut s = self.scenario.clone();
        let bitrate = a.bitrate.map(Bitrate::new).transpose().map_err(invalid)?;
        s.apply(&Overrides { seed: a.seed, bitrate, strategy: a.strategy });
        if let Some(p) = a.poll_ms {
            s.config.monitor.poll_ms = p;
        }
        self.replace(s)
    }

    fn att_ctrl(&mut self, args: &Value) -> Reply {
        match parse_required::<AttCtrlArgs>(args).map_err(invalid)? {
            AttCtrlArgs::Start { mut attack } => {
                if let cantestbed::attack::AttackProfile::Replay { path, .. } = &mut attack.profile {
                    *path = resolve(&self.root, &path.to_string_lossy());
                }
                let h = self.sim.start_attack(&attack, None).map_err(invalid)?;
                Ok(json!({"handle": h.0, "kind": attack.profile.kind_name()}))
            }
            AttCtrlArgs::Stop { handle } => {
                self.sim.stop_attack(AttackHandle(handle)).map_err(invalid)?;
                Ok(json!({"stopped": handle}))
            }
            AttCtrlArgs::List => Ok(self.state()["attacks"].clone()),
        }
    }

    fn prog_node(&mut self, args: &Value) -> Reply {
        let a: ProgNodeArgs = parse_required(args).map_err(invalid)?;
        if a.behavior.is_none() && a.model.is_none() && a.sensors.is_empty() {
            return Err(invalid("prog_node needs `behavior`, `model` or `sensors`"));
        }
        if self.sim.ecu(&a.node).is_none() {
            return Err(invalid(format!("unknown node `{}`", a.node)));
        }
        if let Some(b) = a.behavior {
            let table = match b {
                BehaviorArg::Role(r) => r.default_behavior().ok_or_else(|| invalid("custom role needs a behavior table"))?,
                BehaviorArg::Table(t) => t,
            };
            self.sim.prog_node(&a.node, table).map_err(invalid)?;
        }
        if let Some(m) = a.model {
            let path = resolve(&self.root, &m);
            let model = QuantMlpModel::load(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            self.sim.load_ids_model(Arc::new(model)).map_err(invalid)?;
        }
        for (sensor, v) in &a.sensors {
            self.sim.set_sensor(&a.node, sensor, *v).map_err(invalid)?;
        }
        Ok(json!({"node": a.node, "now_ms": self.now_ms()}))
    }

    fn debug_config(&mut self, args: &Value) -> Reply {
        let a: DebugConfigArgs = parse_args(args).map_err(invalid)?;
        if a.clear {
            self.sim.clear_capture();
        }
        if let Some(c) = &a.capture {
            self.sim.set_capture(c).map_err(invalid)?;
        }
        let signals: Vec<Value> = self
            .sim
            .signal_registry()
            .into_iter()
            .map(|d| json!({"name": d.name, "width": d.width}))
            .collect();
        let b = self.sim.bitrate();
        let capture = self.sim.capture().map(|t| {
            json!({"from_ms": t.start().as_millis(b), "to_ms": t.end().as_millis(b), "samples": t.sample_count()})
        });
        Ok(json!({"signals": signals, "capture": capture}))
    }

    fn subscribe(&mut self, conn: u64, args: &Value, kind: SubKind, out: &Outbox) -> Reply {
        let a: SubscribeArgs = parse_args(args).map_err(invalid)?;
        self.open_or_cancel(conn, a.cancel, kind, out)
    }

    fn open_or_cancel(&mut self, conn: u64, cancel: Option<u64>, kind: SubKind, out: &Outbox) -> Reply {
        if let Some(n) = cancel {
            return match self.subs.get(&n) {
                Some(s) if s.conn == conn => {
                    self.subs.remove(&n);
                    Ok(json!({"cancelled": n}))
                }
                _ => Err(invalid(format!("no subscription {n} on this session"))),
            };
        }
        let n = self.next_sub;
        self.next_sub += 1;
        self.subs.insert(n, Sub { conn, kind, out: out.clone() });
        Ok(json!({"subscription": n}))
    }

    fn signal_capture(&mut self, conn: u64, args: &Value, out: &Outbox) -> Reply {
        let a: SignalCaptureArgs = parse_args(args).map_err(invalid)?;
        if a.dump {
            let trace = self.sim.capture().ok_or_else(|| invalid("no capture configured; see debug_config"))?;
            let vcd = export_vcd(trace, self.sim.bitrate()).map_err(invalid)?;
            return Ok(json!({"vcd": vcd}));
        }
        self.open_or_cancel(conn, a.cancel, SubKind::Signals, out)
    }

    fn user_capture(&mut self, conn: u64, args: &Value, out: &Outbox) -> Reply {
        let a: UserCaptureArgs = parse_args(args).map_err(invalid)?;
        if a.cancel.is_none() {
            if a.signals.is_empty() {
                return Err(invalid("user_capture needs a non-empty `signals` list"));
            }
            let known: BTreeSet<String> = self.sim.signal_registry().into_iter().map(|d| d.name).collect();
            if let Some(s) = a.signals.iter().find(|s| !known.contains(*s)) {
                return Err(invalid(format!("unknown signal `{s}`")));
            }
        }
        let names = a.signals.into_iter().collect();
        self.open_or_cancel(conn, a.cancel, SubKind::User(names), out)
    }

    fn load_scenario(&mut self, args: &Value) -> Reply {
        let a: LoadScenarioArgs = parse_args(args).map_err(invalid)?;
        let mut s = match (&a.path, &a.toml) {
            (Some(p), None) => Scenario::load(&resolve(&self.root, p)).map_err(invalid)?,
            (None, Some(t)) => Scenario::from_toml(t, &self.root).map_err(invalid)?,
            _ => return Err(invalid("give exactly one of `path` or `toml`")),
        };
        let bitrate = a.bitrate.map(Bitrate::new).transpose().map_err(invalid)?;
        s.apply(&Overrides { seed: a.seed, bitrate, strategy: a.strategy });
        self.replace(s)
    }

    fn start_run(&mut self, id: &Value, args: &Value, out: &Outbox) -> Option<Reply> {
        let a: RunArgs = match parse_args(args) {
            Ok(a) => a,
            Err(e) => return Some(Err(invalid(e))),
        };
        let b = self.sim.bitrate();
        let until_ms = a.until_ms.unwrap_or(self.scenario.config.stop_ms);
        if !(until_ms.is_finite() && until_ms >= 0.0) {
            return Some(Err(invalid("until_ms must be non-negative")));
        }
        let until = SimTime(b.ticks_from_ms(until_ms));
        if until <= self.sim.now() {
            return Some(Err(invalid(format!("until_ms {until_ms} is not after now ({} ms)", self.now_ms()))));
        }
        let speed = a.speed.filter(|s| *s > 0.0);
        if a.speed.is_some_and(|s| !s.is_finite() || s < 0.0) {
            return Some(Err(invalid("speed must be a non-negative number")));
        }
        self.end_run(json!({"superseded": true}));
        self.run = Some(RunState {
            until,
            speed,
            wall_start: Instant::now(),
            sim_start: self.sim.now(),
            waiter: a.wait.then(|| (id.clone(), out.clone())),
        });
        if a.wait {
            None
        } else {
            Some(Ok(json!({"running": true, "until_ms": until_ms})))
        }
    }

    /// Stop running and answer a waiting `run` with `extra` merged into
    /// the final state.
    fn end_run(&mut self, extra: Value) {
        if let Some(RunState { waiter: Some((id, out)), .. }) = self.run.take() {
            let mut v = json!({"now_ms": self.now_ms(), "stats": self.sim.stats()});
            if let (Some(m), Value::Object(e)) = (v.as_object_mut(), extra) {
                m.extend(e);
            }
            out.respond(&Response::ok(id, v));
        }
        self.run = None;
    }

    fn end_run_error(&mut self, message: String) {
        if let Some(RunState { waiter: Some((id, out)), .. }) = self.run.take() {
            out.respond(&Response::err(id, ErrorCode::ValidationError, message.clone()));
        }
        self.run = None;
        self.broadcast_log("error", &message);
    }

    fn pause(&mut self) -> Value {
        self.end_run(json!({"paused": true}));
        json!({"now_ms": self.now_ms()})
    }

    fn step(&mut self, args: &Value) -> Reply {
        let a: StepArgs = parse_args(args).map_err(invalid)?;
        if self.run.is_some() {
            return Err((ErrorCode::EngineBusy, "running; send pause first".into()));
        }
        match a.ms {
            Some(ms) if ms.is_finite() && ms > 0.0 => {
                let t = self.sim.now() + self.sim.bitrate().ticks_from_ms(ms);
                self.sim.run_until(t).map_err(invalid)?;
            }
            Some(_) => return Err(invalid("ms must be positive")),
            None => {
                self.sim.step().map_err(invalid)?;
            }
        }
        Ok(json!({"now_ms": self.now_ms(), "stats": self.sim.stats()}))
    }

    fn advance(&mut self) {
        let Some(r) = &self.run else { return };
        let b = self.sim.bitrate();
        let target = match r.speed {
            None => self.sim.now() + b.ticks_from_ms(BATCH_CHUNK_MS),
            Some(speed) => {
                let virt_ms = r.wall_start.elapsed().as_secs_f64() * 1000.0 * speed;
                r.sim_start + b.ticks_from_ms(virt_ms)
            }
        };
        let until = r.until;
        let target = target.min(until);
        if target > self.sim.now() {
            if let Err(e) = self.sim.run_until(target) {
                self.end_run_error(e.to_string());
                return;
            }
        }
        if self.sim.now() >= until {
            self.end_run(json!({"finished": true}));
        }
    }

    fn broadcast_log(&mut self, level: &str, message: &str) {
        let line = json!({"stream": "log", "level": level, "message": message, "time": self.sim.now()});
        self.deliver(|k| *k == SubKind::Monitor, line);
    }

    fn deliver(&mut self, wants: impl Fn(&SubKind) -> bool, mut record: Value) {
        let mut dead = Vec::new();
        for (n, s) in &self.subs {
            if !wants(&s.kind) {
                continue;
            }
            record["subscription"] = json!(n);
            if !s.out.send(record.to_string()) {
                dead.push(s.conn);
            }
        }
        for c in dead {
            self.drop_conn(c);
        }
    }

    fn fan_out(&mut self) {
        let notes = self.sim.drain_notifications();
        let warnings: Vec<String> = self.sim.warnings()[self.warnings_sent..].to_vec();
        self.warnings_sent += warnings.len();
        for w in warnings {
            self.broadcast_log("warning", &w);
        }
        if self.subs.is_empty() {
            return;
        }
        for n in notes {
            let record = serde_json::to_value(&n).expect("serialisable");
            match &n {
                Notification::Bus(_) => self.deliver(|k| *k == SubKind::BusLog, record),
                Notification::Status(_) | Notification::Verdict(_) | Notification::Attack { .. } => {
                    self.deliver(|k| *k == SubKind::Monitor, record)
                }
                Notification::Signal { name, .. } => {
                    let name = name.clone();
                    self.deliver(
                        |k| match k {
                            SubKind::Signals => true,
                            SubKind::User(set) => set.contains(&name),
                            _ => false,
                        },
                        record,
                    )
                }
            }
        }
    }
}

fn build(s: &Scenario) -> Result<Simulation, String> {
    let mut sim = s.build().map_err(|e| e.to_string())?;
    sim.enable_notifications();
    Ok(sim)
}
