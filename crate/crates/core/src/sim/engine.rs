//! The simulation: ECU ports and an attacker port on one wired-AND bus,
//! driven by a single event queue.
//!
//! Frames are scheduled at frame granularity. Arbitration compares queued
//! frames bit by bit at an interframe boundary, the winner occupies the bus
//! for its full stuffed length including intermission, and receivers decode
//! the acknowledged bitstream. Per-bit line levels are materialised only
//! inside an active capture window.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::queue::{EventQueue, PastEvent};
use crate::attack::{
    load_replay, AttackError, AttackHandle, AttackProfile, AttackRuntime, AttackSpec,
    FuzzGenerator, ReplayOptions, ReplayTrace,
};
use crate::can::{decode_frame, encode_frame, CanFrame, FrameBitstream, Level};
use crate::ecu::{default_messages, BehaviorTable, Ecu, EcuConfig, EcuError, Role};
use crate::ids::{Classifier, CostProfile, IdsError, IdsVerdict, QuantMlpModel, ReceivedFrame, Strategy};
use crate::monitor::{
    BusLogRecord, CaptureError, LifeTracker, SignalDecl, SignalTrace, StatusCheck, StatusSnapshot,
    DEFAULT_CAPTURE_SAMPLES,
};
use crate::rng::stream_rng;
use crate::time::{Bitrate, SimTime};
use crate::TrafficClass;

/// Name of the attack node's bus port.
pub const ATTACKER_PORT: &str = "attacker";

const ATTACK_QUEUE_CAP: usize = 1024;
const ERROR_FLAG_BITS: u64 = 6;
const ERROR_DELIMITER_BITS: u64 = 8;
const INTERMISSION_BITS: u64 = 3;

// Same-tick ordering.
const C_FRAME_END: u8 = 0;
const C_SCRIPT: u8 = 1;
const C_TASK: u8 = 2;
const C_ATTACK: u8 = 3;
const C_PROCESSING: u8 = 4;
const C_POLL: u8 = 5;
const C_ARBITRATE: u8 = 6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Ecu(#[from] EcuError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Ids(#[from] IdsError),
    #[error(transparent)]
    Past(#[from] PastEvent),
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("CAN id {id:#05x} transmitted by both `{first}` and `{second}`")]
    DuplicateId { id: u16, first: String, second: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("script step {step}: {message}")]
    Script { step: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct IdsConfig {
    pub model: Option<Arc<QuantMlpModel>>,
    /// One classifier per profile; verdict classes come from the first.
    pub profiles: Vec<CostProfile>,
    /// IdsNode hosting the detector; its reset clears the window.
    pub host: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub from_ms: f64,
    pub to_ms: f64,
    /// Subset of the signal registry; all signals when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals: Option<Vec<String>>,
    #[serde(default = "default_samples")]
    pub max_samples: u64,
}

fn default_samples() -> u64 {
    DEFAULT_CAPTURE_SAMPLES
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig {
    pub poll_ms: f64,
    pub checks: Vec<StatusCheck>,
    pub capture: Option<CaptureConfig>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            poll_ms: 300.0,
            checks: Vec::new(),
            capture: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub bitrate: Bitrate,
    pub seed: u64,
    pub nodes: Vec<EcuConfig>,
    /// Functional message name -> CAN id.
    pub messages: BTreeMap<String, u16>,
    pub ids: Option<IdsConfig>,
    pub monitor: MonitorConfig,
}

impl SimConfig {
    pub fn new(nodes: Vec<EcuConfig>) -> Self {
        SimConfig {
            bitrate: Bitrate::default(),
            seed: 0,
            nodes,
            messages: default_messages(),
            ids: None,
            monitor: MonitorConfig::default(),
        }
    }

    /// The four functional ECUs, named ECU1..ECU4.
    pub fn functional_roster() -> Vec<EcuConfig> {
        [Role::EngineBrake, Role::AirbagLight, Role::Sensors, Role::Lights]
            .iter()
            .enumerate()
            .map(|(i, r)| EcuConfig::new(&format!("ECU{}", i + 1), *r))
            .collect()
    }
}

/// Scripted or interactive engine command.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    SetSensor { node: String, sensor: String, value: u8 },
    /// `name` lets a later step stop this attack.
    StartAttack { spec: AttackSpec, name: Option<String> },
    StopAttack { name: String },
    /// `None` resets every node.
    ResetNode { node: Option<String> },
    ProgNode { node: String, behavior: BehaviorTable },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub now: SimTime,
    pub frames: u64,
    pub errors: u64,
    pub events: u64,
    /// Attack frames discarded because the attacker's queue was full.
    pub attack_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    /// Index into the bus log of the newest frame in the window.
    pub record: usize,
    pub truth: TrafficClass,
    pub verdict: IdsVerdict,
}

/// Streamed to live subscribers when enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stream", rename_all = "snake_case")]
pub enum Notification {
    Bus(BusLogRecord),
    Status(StatusSnapshot),
    Verdict(VerdictEntry),
    Signal { time: SimTime, name: String, value: i64 },
    Attack { time: SimTime, handle: u32, kind: String, active: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Task {
    Control,
    Life,
}

#[derive(Debug)]
enum Event {
    FrameEnd,
    Script { step: usize, action: Action },
    Timer { node: usize, task: Task, gen: u64 },
    Attack { handle: u32, gen: u64 },
    AttackStop { handle: u32 },
    Rx { node: usize, gen: u64, frame: CanFrame },
    Verdict { classifier: usize, entry: VerdictEntry },
    Poll,
    Arbitrate,
}

#[derive(Debug, Clone)]
struct Queued {
    frame: CanFrame,
    label: TrafficClass,
    handle: Option<u32>,
}

#[derive(Debug)]
struct ActiveAttack {
    kind: &'static str,
    label: Option<TrafficClass>,
    runtime: AttackRuntime,
    /// Guards against stale ticks after a stop.
    gen: u64,
}

#[derive(Debug)]
enum InFlight {
    Frame { port: usize, queued: Queued, sof: SimTime, bits: FrameBitstream },
    Error,
}

struct Capture {
    trace: SignalTrace,
    bus: Option<usize>,
    /// Per port.
    tx: Vec<Option<usize>>,
    by_name: BTreeMap<String, usize>,
}

pub struct Simulation {
    config: SimConfig,
    queue: EventQueue<Event>,
    ecus: Vec<Ecu>,
    gens: Vec<u64>,
    /// Per ECU: pending frames by id (one mailbox per id, newest wins).
    mailboxes: Vec<BTreeMap<u16, CanFrame>>,
    attack_fifo: VecDeque<Queued>,
    flood: Option<(Queued, u32)>,
    attacks: BTreeMap<u32, ActiveAttack>,
    next_handle: u32,
    named_attacks: BTreeMap<String, u32>,
    in_flight: Option<InFlight>,
    bus_free_at: SimTime,
    arbitrate_pending: Option<SimTime>,
    classifiers: Vec<Classifier>,
    ids_host: Option<usize>,
    bus_log: Vec<BusLogRecord>,
    errors_since_frame: u32,
    verdicts: Vec<Vec<VerdictEntry>>,
    status_log: Vec<StatusSnapshot>,
    life_tracker: LifeTracker,
    observed_life: BTreeMap<u16, u32>,
    signal_log: BTreeMap<String, Vec<(SimTime, i64)>>,
    capture: Option<Capture>,
    stats: RunStats,
    warnings: Vec<String>,
    outbox: Option<Vec<Notification>>,
    failure: Option<SimError>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("now", &self.queue.now())
            .field("nodes", &self.ecus.len())
            .field("stats", &self.stats)
            .finish()
    }
}

fn ms_ticks(bitrate: Bitrate, ms: f64) -> u64 {
    bitrate.ticks_from_ms(ms)
}

fn positive(v: f64, what: &str) -> Result<(), SimError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SimError::Invalid(format!("{what} must be positive, got {v}")))
    }
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Simulation, SimError> {
        positive(config.monitor.poll_ms, "poll period")?;
        let mut ecus = Vec::with_capacity(config.nodes.len());
        let mut owners: BTreeMap<u16, String> = BTreeMap::new();
        for (i, n) in config.nodes.iter().enumerate() {
            if n.name == ATTACKER_PORT || n.name == "bus" || n.name.is_empty() || n.name.contains(['.', ' ']) {
                return Err(SimError::Invalid(format!("node name `{}` is reserved or malformed", n.name)));
            }
            if config.nodes[..i].iter().any(|o| o.name == n.name) {
                return Err(SimError::DuplicateNode(n.name.clone()));
            }
            positive(n.life_period_ms, "life period")?;
            positive(n.control_period_ms, "control period")?;
            if !(n.reaction_us.is_finite() && n.reaction_us >= 0.0) {
                return Err(SimError::Invalid(format!("node `{}` reaction time must be non-negative", n.name)));
            }
            let ecu = Ecu::new(n.clone(), i, &config.messages)?;
            for &id in ecu.tx_ids().values() {
                if let Some(first) = owners.insert(id, n.name.clone()) {
                    if first != n.name {
                        return Err(SimError::DuplicateId { id, first, second: n.name.clone() });
                    }
                }
            }
            ecus.push(ecu);
        }

        let mut classifiers = Vec::new();
        let mut ids_host = None;
        if let Some(ids) = &config.ids {
            if ids.profiles.is_empty() {
                return Err(SimError::Invalid("IDS configured without a cost profile".into()));
            }
            if let Some(m) = &ids.model {
                m.validate()?;
            }
            for p in &ids.profiles {
                p.validate().map_err(SimError::Invalid)?;
                classifiers.push(Classifier::new(ids.model.clone(), p.clone(), config.bitrate));
            }
            ids_host = match &ids.host {
                Some(h) => Some(
                    config
                        .nodes
                        .iter()
                        .position(|n| &n.name == h)
                        .ok_or_else(|| EcuError::UnknownNode(h.clone()))?,
                ),
                None => config.nodes.iter().position(|n| n.role == Role::IdsNode),
            };
        }

        let n = ecus.len();
        let mut sim = Simulation {
            queue: EventQueue::new(),
            ecus,
            gens: vec![0; n],
            mailboxes: vec![BTreeMap::new(); n],
            attack_fifo: VecDeque::new(),
            flood: None,
            attacks: BTreeMap::new(),
            next_handle: 1,
            named_attacks: BTreeMap::new(),
            in_flight: None,
            bus_free_at: SimTime::ZERO,
            arbitrate_pending: None,
            verdicts: vec![Vec::new(); classifiers.len()],
            classifiers,
            ids_host,
            bus_log: Vec::new(),
            errors_since_frame: 0,
            status_log: Vec::new(),
            life_tracker: LifeTracker::default(),
            observed_life: BTreeMap::new(),
            signal_log: BTreeMap::new(),
            capture: None,
            stats: RunStats::default(),
            warnings: Vec::new(),
            outbox: None,
            failure: None,
            config,
        };
        for i in 0..n {
            sim.start_tasks(i)?;
            sim.log_initial_signals(i);
        }
        let poll = ms_ticks(sim.config.bitrate, sim.config.monitor.poll_ms);
        sim.queue.schedule(SimTime(poll), C_POLL, Event::Poll)?;
        if let Some(c) = sim.config.monitor.capture.clone() {
            sim.set_capture(&c)?;
        }
        Ok(sim)
    }

    // ---- accessors -------------------------------------------------

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn bitrate(&self) -> Bitrate {
        self.config.bitrate
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn stats(&self) -> RunStats {
        RunStats { now: self.now(), ..self.stats }
    }

    pub fn ecus(&self) -> &[Ecu] {
        &self.ecus
    }

    pub fn ecu(&self, name: &str) -> Option<&Ecu> {
        self.ecus.iter().find(|e| e.name() == name)
    }

    pub fn bus_log(&self) -> &[BusLogRecord] {
        &self.bus_log
    }

    pub fn status_log(&self) -> &[StatusSnapshot] {
        &self.status_log
    }

    /// Verdicts per configured cost profile, in emission order.
    pub fn verdicts(&self) -> &[Vec<VerdictEntry>] {
        &self.verdicts
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.classifiers.iter().map(|c| c.strategy()).collect()
    }

    /// Change history of every logged signal.
    pub fn signal_log(&self) -> &BTreeMap<String, Vec<(SimTime, i64)>> {
        &self.signal_log
    }

    pub fn capture(&self) -> Option<&SignalTrace> {
        self.capture.as_ref().map(|c| &c.trace)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn active_attacks(&self) -> Vec<(AttackHandle, &'static str)> {
        self.attacks.iter().map(|(h, a)| (AttackHandle(*h), a.kind)).collect()
    }

    /// Start collecting [`Notification`]s for [`Self::drain_notifications`].
    pub fn enable_notifications(&mut self) {
        self.outbox.get_or_insert_with(Vec::new);
    }

    pub fn drain_notifications(&mut self) -> Vec<Notification> {
        self.outbox.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn notify(&mut self, n: impl FnOnce() -> Notification) {
        if let Some(o) = &mut self.outbox {
            o.push(n());
        }
    }

    fn node_index(&self, name: &str) -> Result<usize, EcuError> {
        self.ecus
            .iter()
            .position(|e| e.name() == name)
            .ok_or_else(|| EcuError::UnknownNode(name.to_string()))
    }

    fn port_name(&self, port: usize) -> &str {
        self.ecus.get(port).map_or(ATTACKER_PORT, |e| e.name())
    }

    // ---- signals ---------------------------------------------------

    /// Every signal that can be captured, in registry order.
    pub fn signal_registry(&self) -> Vec<SignalDecl> {
        let mut v = vec![SignalDecl { name: "bus".into(), width: 1 }];
        for e in &self.ecus {
            v.push(SignalDecl { name: format!("tx.{}", e.name()), width: 1 });
        }
        v.push(SignalDecl { name: format!("tx.{ATTACKER_PORT}"), width: 1 });
        for e in &self.ecus {
            for a in e.state().actuators.keys() {
                v.push(SignalDecl { name: format!("{}.{a}", e.name()), width: 1 });
            }
            for s in e.state().sensors.keys() {
                v.push(SignalDecl { name: format!("{}.{s}", e.name()), width: 8 });
            }
            v.push(SignalDecl { name: format!("{}.life_counter", e.name()), width: 32 });
        }
        v
    }

    fn signal_value(&self, name: &str) -> Option<u64> {
        if name == "bus" || name.starts_with("tx.") {
            return Some(1);
        }
        let (node, sig) = name.split_once('.')?;
        let st = self.ecu(node)?.state();
        if sig == "life_counter" {
            return Some(u64::from(st.life_counter));
        }
        st.actuators
            .get(sig)
            .map(|b| u64::from(*b))
            .or_else(|| st.sensors.get(sig).map(|v| u64::from(*v)))
    }

    fn log_signal(&mut self, node: usize, sig: &str, value: i64) {
        let now = self.now();
        let name = format!("{}.{sig}", self.ecus[node].name());
        if let Some(c) = &mut self.capture {
            if let Some(&i) = c.by_name.get(&name) {
                c.trace.record(i, now, value as u64);
            }
        }
        self.notify(|| Notification::Signal { time: now, name: name.clone(), value });
        self.signal_log.entry(name).or_default().push((now, value));
    }

    fn log_initial_signals(&mut self, node: usize) {
        let st = self.ecus[node].state().clone();
        for (a, v) in &st.actuators {
            self.log_signal(node, a, i64::from(*v));
        }
        for (s, v) in &st.sensors {
            self.log_signal(node, s, i64::from(*v));
        }
        self.log_signal(node, "life_counter", i64::from(st.life_counter));
    }

    /// Begin a bit-level capture. The window starts no earlier than now.
    pub fn set_capture(&mut self, c: &CaptureConfig) -> Result<(), SimError> {
        let b = self.config.bitrate;
        let start = SimTime(ms_ticks(b, c.from_ms.max(0.0))).max(self.now());
        let end = SimTime(ms_ticks(b, c.to_ms.max(0.0)));
        let registry = self.signal_registry();
        let chosen: Vec<SignalDecl> = match &c.signals {
            None => registry,
            Some(names) => names
                .iter()
                .map(|n| {
                    registry
                        .iter()
                        .find(|d| &d.name == n)
                        .cloned()
                        .ok_or_else(|| CaptureError::UnknownSignal(n.clone()))
                })
                .collect::<Result<_, _>>()?,
        };
        let with_init: Vec<(SignalDecl, u64)> = chosen
            .into_iter()
            .map(|d| {
                let v = self.signal_value(&d.name).unwrap_or(0);
                (d, v)
            })
            .collect();
        let trace = SignalTrace::new(start, end, with_init, c.max_samples)?;
        let by_name: BTreeMap<String, usize> =
            trace.signals().iter().enumerate().map(|(i, d)| (d.name.clone(), i)).collect();
        let tx = (0..=self.ecus.len())
            .map(|p| by_name.get(&format!("tx.{}", self.port_name(p))).copied())
            .collect();
        self.capture = Some(Capture { bus: by_name.get("bus").copied(), tx, by_name, trace });
        Ok(())
    }

    /// Install a detector model and clear the windows. Without configured
    /// classifiers, one per built-in strategy profile is attached.
    pub fn load_ids_model(&mut self, model: Arc<QuantMlpModel>) -> Result<(), SimError> {
        model.validate()?;
        if self.classifiers.is_empty() {
            for s in [Strategy::EcuCoupled, Strategy::ControllerCoupled] {
                let c = Classifier::new(Some(model.clone()), CostProfile::paper_artix7(s), self.config.bitrate);
                self.classifiers.push(c);
                self.verdicts.push(Vec::new());
            }
            if self.ids_host.is_none() {
                self.ids_host = self.config.nodes.iter().position(|n| n.role == Role::IdsNode);
            }
        } else {
            self.classifiers.iter_mut().for_each(|c| c.set_model(model.clone()));
        }
        Ok(())
    }

    pub fn clear_capture(&mut self) -> Option<SignalTrace> {
        self.capture.take().map(|c| c.trace)
    }

    /// Record line levels for a bus transaction starting at `sof`.
    /// `drives[p]` is what port `p` puts on its tx line, bit by bit.
    fn capture_bits(&mut self, sof: SimTime, bus: &[Level], drives: &[(usize, Vec<Level>)]) {
        let Some(c) = &mut self.capture else { return };
        if !c.trace.covers(sof, sof + bus.len() as u64) {
            return;
        }
        if let Some(bi) = c.bus {
            for (k, l) in bus.iter().enumerate() {
                c.trace.record(bi, sof + k as u64, u64::from(l.bit()));
            }
            c.trace.record(bi, sof + bus.len() as u64, 1);
        }
        for (p, levels) in drives {
            if let Some(ti) = c.tx.get(*p).copied().flatten() {
                for (k, l) in levels.iter().enumerate() {
                    c.trace.record(ti, sof + k as u64, u64::from(l.bit()));
                }
                c.trace.record(ti, sof + levels.len() as u64, 1);
            }
        }
    }

    // ---- scheduling helpers ------------------------------------------

    fn start_tasks(&mut self, node: usize) -> Result<(), SimError> {
        let b = self.config.bitrate;
        let cfg = &self.ecus[node].config;
        let life_offset = cfg
            .life_offset_ms
            .unwrap_or(1.0 + (3.0 * node as f64) % 45.0);
        let control_offset = 0.2 + 0.1 * (node % 40) as f64;
        let gen = self.gens[node];
        let now = self.now();
        let has_control = !self.ecus[node].behavior().emit.is_empty();
        self.queue.schedule(now + ms_ticks(b, life_offset), C_TASK, Event::Timer { node, task: Task::Life, gen })?;
        if has_control {
            self.queue.schedule(
                now + ms_ticks(b, control_offset),
                C_TASK,
                Event::Timer { node, task: Task::Control, gen },
            )?;
        }
        Ok(())
    }

    fn request_arbitration(&mut self) {
        let at = self.now().max(self.bus_free_at);
        if self.arbitrate_pending.is_some_and(|p| p <= at) {
            return;
        }
        self.arbitrate_pending = Some(at);
        self.queue.schedule(at, C_ARBITRATE, Event::Arbitrate).expect("not in the past");
    }

    /// Queue an action at `at`. Errors surface from [`Self::run_until`]
    /// with the step index.
    pub fn schedule_action(&mut self, at: SimTime, step: usize, action: Action) -> Result<(), SimError> {
        self.queue.schedule(at, C_SCRIPT, Event::Script { step, action })?;
        Ok(())
    }

    // ---- run control -----------------------------------------------

    /// Execute every event due at or before `t`, then move the clock to `t`.
    pub fn run_until(&mut self, t: SimTime) -> Result<RunStats, SimError> {
        while let Some((_, ev)) = self.queue.pop_due(t) {
            self.stats.events += 1;
            self.dispatch(ev)?;
        }
        self.queue.advance_to(t);
        Ok(self.stats())
    }

    /// Execute every event of the next occupied tick.
    pub fn step(&mut self) -> Result<Option<SimTime>, SimError> {
        let Some(t) = self.queue.peek_time() else { return Ok(None) };
        self.run_until(t)?;
        Ok(Some(t))
    }

    fn dispatch(&mut self, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::FrameEnd => self.on_frame_end()?,
            Event::Script { step, action } => {
                self.apply(action).map_err(|e| SimError::Script { step, message: e.to_string() })?
            }
            Event::Timer { node, task, gen } => {
                if gen == self.gens[node] {
                    self.on_timer(node, task)?;
                }
            }
            Event::Attack { handle, gen } => self.on_attack_tick(handle, gen)?,
            Event::AttackStop { handle } => {
                // Already stopped is fine for timed attacks.
                let _ = self.stop_attack(AttackHandle(handle));
            }
            Event::Rx { node, gen, frame } => {
                if gen == self.gens[node] {
                    let out = self.ecus[node].receive(&frame);
                    for (a, v) in out.actuator_changes {
                        self.log_signal(node, &a, i64::from(v));
                    }
                }
            }
            Event::Verdict { classifier, entry } => {
                if classifier == 0 {
                    if let Some(r) = self.bus_log.get_mut(entry.record) {
                        r.verdict = Some(entry.verdict.class);
                    }
                }
                self.notify(|| Notification::Verdict(entry.clone()));
                self.verdicts[classifier].push(entry);
            }
            Event::Poll => self.on_poll()?,
            Event::Arbitrate => {
                self.arbitrate_pending = None;
                self.arbitrate()?;
            }
        }
        Ok(())
    }

    /// Apply an action now.
    pub fn apply(&mut self, action: Action) -> Result<(), SimError> {
        match action {
            Action::SetSensor { node, sensor, value } => self.set_sensor(&node, &sensor, value),
            Action::StartAttack { spec, name } => {
                let h = self.start_attack(&spec, None)?;
                if let Some(n) = name {
                    self.named_attacks.insert(n, h.0);
                }
                Ok(())
            }
            Action::StopAttack { name } => {
                let h = self
                    .named_attacks
                    .remove(&name)
                    .ok_or_else(|| SimError::Invalid(format!("no running attack named `{name}`")))?;
                self.stop_attack(AttackHandle(h))
            }
            Action::ResetNode { node } => self.reset_node(node.as_deref()),
            Action::ProgNode { node, behavior } => self.prog_node(&node, behavior),
        }
    }

    pub fn set_sensor(&mut self, node: &str, sensor: &str, value: u8) -> Result<(), SimError> {
        let i = self.node_index(node)?;
        self.ecus[i].set_sensor(sensor, value)?;
        self.log_signal(i, sensor, i64::from(value));
        Ok(())
    }

    /// Reset one node, or all nodes with `None`.
    pub fn reset_node(&mut self, node: Option<&str>) -> Result<(), SimError> {
        let targets: Vec<usize> = match node {
            Some(n) => vec![self.node_index(n)?],
            None => (0..self.ecus.len()).collect(),
        };
        for i in targets {
            let changes = self.ecus[i].reset();
            self.gens[i] += 1;
            self.mailboxes[i].clear();
            for (a, v) in changes {
                self.log_signal(i, &a, i64::from(v));
            }
            let st = self.ecus[i].state().clone();
            for (s, v) in &st.sensors {
                if self.signal_log.get(&format!("{}.{s}", self.ecus[i].name())).and_then(|h| h.last()).map(|x| x.1)
                    != Some(i64::from(*v))
                {
                    self.log_signal(i, s, i64::from(*v));
                }
            }
            self.log_signal(i, "life_counter", 0);
            if Some(i) == self.ids_host {
                self.classifiers.iter_mut().for_each(Classifier::reset);
            }
            self.start_tasks(i)?;
        }
        Ok(())
    }

    /// Load a new behaviour table into a node and reset it.
    pub fn prog_node(&mut self, node: &str, behavior: BehaviorTable) -> Result<(), SimError> {
        let i = self.node_index(node)?;
        let mut probe = self.ecus[i].clone();
        probe.reprogram(behavior.clone(), &self.config.messages)?;
        for (k, other) in self.ecus.iter().enumerate() {
            if k == i {
                continue;
            }
            for (&id, name) in probe.tx_ids().iter().map(|(n, id)| (id, n)) {
                if other.owns_id(id) {
                    return Err(SimError::DuplicateId {
                        id,
                        first: other.name().to_string(),
                        second: format!("{node} ({name})"),
                    });
                }
            }
        }
        let changes = self.ecus[i].reprogram(behavior, &self.config.messages)?;
        self.gens[i] += 1;
        self.mailboxes[i].clear();
        for (a, v) in changes {
            self.log_signal(i, &a, i64::from(v));
        }
        self.log_signal(i, "life_counter", 0);
        self.start_tasks(i)?;
        Ok(())
    }

    // ---- attacks ---------------------------------------------------

    /// Start an attack. `trace` supplies a preloaded trace for replay
    /// profiles; otherwise the profile's path is read.
    pub fn start_attack(
        &mut self,
        spec: &AttackSpec,
        trace: Option<Arc<ReplayTrace>>,
    ) -> Result<AttackHandle, SimError> {
        let p = &spec.profile;
        p.validate()?;
        let kind = p.kind_name();
        if self.attacks.values().any(|a| a.kind == kind) {
            return Err(AttackError::ConflictingAttack(kind).into());
        }
        if let Some(d) = spec.duration_ms {
            positive(d, "attack duration")?;
        }
        let b = self.config.bitrate;
        let handle = self.next_handle;
        let stream = spec.seed_stream.clone().unwrap_or_else(|| format!("attack.{handle}"));
        let now = self.now();
        let runtime = match p {
            AttackProfile::DosFlood { id, payload } => AttackRuntime::Dos {
                frame: CanFrame::new(*id, payload).map_err(|e| AttackError::InvalidProfile(e.to_string()))?,
            },
            AttackProfile::Fuzz { rate_hz, id_min, id_max, dlc, payload } => AttackRuntime::Fuzz {
                generator: FuzzGenerator::new(stream_rng(self.config.seed, &stream), *id_min, *id_max, *dlc, *payload),
                interval_ticks: b.ticks_ceil_us(1e6 / rate_hz).max(1),
            },
            AttackProfile::Spoof { id, message, payload, period_ms, count } => {
                let id = match (id, message) {
                    (Some(id), _) => *id,
                    (None, Some(m)) => *self
                        .config
                        .messages
                        .get(m)
                        .ok_or_else(|| AttackError::InvalidProfile(format!("unknown message `{m}`")))?,
                    (None, None) => unreachable!("validated"),
                };
                if !self.ecus.iter().any(|e| e.rx_ids().any(|r| r == id)) {
                    self.warnings.push(format!("spoofed id {id:#05x} is not consumed by any node"));
                }
                AttackRuntime::Spoof {
                    frame: CanFrame::new(id, payload).map_err(|e| AttackError::InvalidProfile(e.to_string()))?,
                    interval_ticks: ms_ticks(b, *period_ms).max(1),
                    remaining: *count,
                }
            }
            AttackProfile::Replay { path, time_scale, default_attack } => {
                let trace = match trace {
                    Some(t) => t,
                    None => Arc::new(load_replay(Path::new(path), &ReplayOptions { default_attack: *default_attack })
                        .map_err(AttackError::from)?),
                };
                AttackRuntime::Replay { trace, next: 0, time_scale: *time_scale, origin: now.ticks() }
            }
        };
        self.next_handle += 1;
        let label = p.label();
        match &runtime {
            AttackRuntime::Dos { frame } => {
                self.flood = Some((
                    Queued { frame: frame.clone(), label: TrafficClass::Dos, handle: Some(handle) },
                    handle,
                ));
                self.request_arbitration();
            }
            AttackRuntime::Replay { trace, .. } if trace.is_empty() => {
                return Err(AttackError::Replay(crate::attack::ReplayError::EmptyTrace).into());
            }
            _ => {
                self.queue.schedule(now, C_ATTACK, Event::Attack { handle, gen: 0 })?;
            }
        }
        if let Some(d) = spec.duration_ms {
            self.queue.schedule(now + ms_ticks(b, d), C_ATTACK, Event::AttackStop { handle })?;
        }
        self.attacks.insert(handle, ActiveAttack { kind, label, runtime, gen: 0 });
        self.notify(|| Notification::Attack { time: now, handle, kind: kind.to_string(), active: true });
        Ok(AttackHandle(handle))
    }

    /// Stop an attack; queued frames are discarded, an in-flight frame
    /// completes.
    pub fn stop_attack(&mut self, handle: AttackHandle) -> Result<(), SimError> {
        let a = self.attacks.remove(&handle.0).ok_or(AttackError::UnknownHandle(handle.0))?;
        if self.flood.as_ref().is_some_and(|(_, h)| *h == handle.0) {
            self.flood = None;
        }
        self.attack_fifo.retain(|q| q.handle != Some(handle.0));
        self.named_attacks.retain(|_, h| *h != handle.0);
        let now = self.now();
        self.notify(|| Notification::Attack { time: now, handle: handle.0, kind: a.kind.to_string(), active: false });
        Ok(())
    }

    fn push_attack_frame(&mut self, q: Queued) {
        if self.attack_fifo.len() >= ATTACK_QUEUE_CAP {
            self.stats.attack_dropped += 1;
            return;
        }
        self.attack_fifo.push_back(q);
        self.request_arbitration();
    }

    fn on_attack_tick(&mut self, handle: u32, gen: u64) -> Result<(), SimError> {
        let now = self.now();
        let b = self.config.bitrate;
        let Some(a) = self.attacks.get_mut(&handle) else { return Ok(()) };
        if a.gen != gen {
            return Ok(());
        }
        let label = a.label;
        let mut out: Vec<Queued> = Vec::new();
        let mut next_at: Option<SimTime> = None;
        let mut finished = false;
        match &mut a.runtime {
            AttackRuntime::Dos { .. } => {}
            AttackRuntime::Fuzz { generator, interval_ticks } => {
                out.push(Queued { frame: generator.next_frame(), label: label.unwrap(), handle: Some(handle) });
                next_at = Some(now + *interval_ticks);
            }
            AttackRuntime::Spoof { frame, interval_ticks, remaining } => {
                out.push(Queued { frame: frame.clone(), label: label.unwrap(), handle: Some(handle) });
                if let Some(r) = remaining {
                    *r -= 1;
                    finished = *r == 0;
                }
                next_at = Some(now + *interval_ticks);
            }
            AttackRuntime::Replay { trace, next, time_scale, origin } => {
                let t0 = trace.records[0].timestamp_ns;
                let offset = |i: usize| {
                    let dt = (trace.records[i].timestamp_ns - t0) as f64 * *time_scale;
                    *origin + b.ticks_ceil_ns(dt.round() as u64)
                };
                while *next < trace.len() && offset(*next) <= now.ticks() {
                    let r = &trace.records[*next];
                    out.push(Queued { frame: r.frame.clone().without_timestamp(), label: r.label, handle: Some(handle) });
                    *next += 1;
                }
                if *next < trace.len() {
                    next_at = Some(SimTime(offset(*next)));
                } else {
                    finished = true;
                }
            }
        }
        for q in out {
            self.push_attack_frame(q);
        }
        if finished {
            // Keep already-queued frames: a finished attack is not a stop.
            self.attacks.remove(&handle);
            let kind = label.map_or("Replay", |_| "Spoof").to_string();
            self.notify(|| Notification::Attack { time: now, handle, kind, active: false });
        } else if let Some(t) = next_at {
            self.queue.schedule(t, C_ATTACK, Event::Attack { handle, gen })?;
        }
        Ok(())
    }

    // ---- ECU tasks -------------------------------------------------

    fn on_timer(&mut self, node: usize, task: Task) -> Result<(), SimError> {
        let b = self.config.bitrate;
        let now = self.now();
        let gen = self.gens[node];
        let period = match task {
            Task::Control => {
                let out = self.ecus[node].control_step();
                for f in out.frames {
                    self.mailboxes[node].insert(f.id(), f);
                }
                self.ecus[node].config.control_period_ms
            }
            Task::Life => {
                let f = self.ecus[node].emit_life_signal();
                self.mailboxes[node].insert(f.id(), f);
                let c = self.ecus[node].state().life_counter;
                self.log_signal(node, "life_counter", i64::from(c));
                self.ecus[node].config.life_period_ms
            }
        };
        if !self.mailboxes[node].is_empty() {
            self.request_arbitration();
        }
        self.queue.schedule(now + ms_ticks(b, period).max(1), C_TASK, Event::Timer { node, task, gen })?;
        Ok(())
    }

    // ---- bus -------------------------------------------------------

    fn head(&self, port: usize) -> Option<Queued> {
        if port < self.ecus.len() {
            self.mailboxes[port]
                .values()
                .next()
                .map(|f| Queued { frame: f.clone(), label: TrafficClass::Benign, handle: None })
        } else if let Some((q, _)) = &self.flood {
            Some(q.clone())
        } else {
            self.attack_fifo.front().cloned()
        }
    }

    fn pop_head(&mut self, port: usize) {
        if port < self.ecus.len() {
            if let Some(&id) = self.mailboxes[port].keys().next() {
                self.mailboxes[port].remove(&id);
            }
        } else if self.flood.is_none() {
            self.attack_fifo.pop_front();
        }
    }

    fn arbitrate(&mut self) -> Result<(), SimError> {
        let now = self.now();
        if self.in_flight.is_some() || now < self.bus_free_at {
            return Ok(());
        }
        let contenders: Vec<(usize, Queued, FrameBitstream)> = (0..=self.ecus.len())
            .filter_map(|p| self.head(p).map(|q| {
                let bits = encode_frame(&q.frame);
                (p, q, bits)
            }))
            .collect();
        if contenders.is_empty() {
            return Ok(());
        }
        // Bitwise wired-AND contention: at each bit, nodes sending recessive
        // over a dominant bus drop out (arbitration field) or detect a bit
        // error (after it).
        let mut alive: Vec<usize> = (0..contenders.len()).collect();
        let mut lost_at: Vec<Option<usize>> = vec![None; contenders.len()];
        let mut error_at: Option<usize> = None;
        let mut k = 0;
        while alive.len() > 1 {
            let levels: Vec<Level> = alive.iter().map(|&c| contenders[c].2.bits().get(k).copied().unwrap_or(Level::Recessive)).collect();
            let bus = if levels.contains(&Level::Dominant) { Level::Dominant } else { Level::Recessive };
            let losers: Vec<usize> = alive
                .iter()
                .zip(&levels)
                .filter(|(_, l)| **l != bus)
                .map(|(c, _)| *c)
                .collect();
            if !losers.is_empty() {
                let in_arbitration = k < self.id_region_len(&contenders[alive[0]].2);
                if in_arbitration {
                    for &c in &losers {
                        lost_at[c] = Some(k);
                    }
                    alive.retain(|c| !losers.contains(c));
                } else {
                    error_at = Some(k);
                    for &c in &losers {
                        lost_at[c] = Some(k);
                    }
                    break;
                }
            }
            k += 1;
            if k >= contenders[alive[0]].2.len() {
                break;
            }
        }

        if let Some(k) = error_at {
            return self.bus_error(now, k, &contenders, &alive, &lost_at);
        }

        // Identical frames from several ports travel as one.
        let winner = alive[0];
        for &c in &alive {
            self.pop_head(contenders[c].0);
        }
        let (port, queued, bits) = contenders[winner].clone();
        let acked = bits.acknowledged();
        let len = acked.len() as u64;
        if self.capture.is_some() {
            let mut drives: Vec<(usize, Vec<Level>)> = Vec::new();
            for (ci, (p, _, b)) in contenders.iter().enumerate() {
                let lv = match lost_at[ci] {
                    Some(l) => b.bits()[..=l].to_vec(),
                    None => b.bits().to_vec(),
                };
                drives.push((*p, lv));
            }
            // Receivers acknowledge.
            let ack = bits.ack_slot();
            for p in 0..=self.ecus.len() {
                if !alive.iter().any(|&c| contenders[c].0 == p) {
                    let mut lv = drives.iter().find(|d| d.0 == p).map(|d| d.1.clone()).unwrap_or_default();
                    lv.resize(ack, Level::Recessive);
                    lv.push(Level::Dominant);
                    match drives.iter_mut().find(|d| d.0 == p) {
                        Some(d) => d.1 = lv,
                        None => drives.push((p, lv)),
                    }
                }
            }
            self.capture_bits(now, acked.bits(), &drives);
        }
        self.in_flight = Some(InFlight::Frame { port, queued, sof: now, bits: acked });
        self.bus_free_at = now + len;
        self.queue.schedule(self.bus_free_at, C_FRAME_END, Event::FrameEnd)?;
        Ok(())
    }

    /// Bits of the stuffed stream up to the end of the RTR bit.
    fn id_region_len(&self, bits: &FrameBitstream) -> usize {
        // Walk the stream counting unstuffed bits until SOF+ID+RTR (13).
        let mut nominal = 0;
        let mut run = 0;
        let mut prev: Option<Level> = None;
        for (i, &l) in bits.bits().iter().enumerate() {
            if run == 5 {
                // Stuff bit.
                run = 1;
                prev = Some(l);
                continue;
            }
            if Some(l) == prev {
                run += 1;
            } else {
                run = 1;
                prev = Some(l);
            }
            nominal += 1;
            if nominal == 13 {
                return i + 1;
            }
        }
        bits.len()
    }

    fn bus_error(
        &mut self,
        now: SimTime,
        k: usize,
        contenders: &[(usize, Queued, FrameBitstream)],
        alive: &[usize],
        lost_at: &[Option<usize>],
    ) -> Result<(), SimError> {
        // Nodes that saw their recessive bit overwritten flag the error
        // and drop their frame; the others retransmit.
        for (ci, (p, _, _)) in contenders.iter().enumerate() {
            if alive.contains(&ci) && lost_at[ci] == Some(k) {
                self.pop_head(*p);
                if *p < self.ecus.len() {
                    self.ecus[*p].record_error();
                }
            }
        }
        self.stats.errors += 1;
        self.errors_since_frame += 1;
        let total = k as u64 + 1 + ERROR_FLAG_BITS + ERROR_DELIMITER_BITS + INTERMISSION_BITS;
        if self.capture.is_some() {
            let base = contenders[alive[0]].2.bits();
            let mut bus: Vec<Level> = Vec::with_capacity(total as usize);
            for i in 0..=k {
                let any_dom = alive.iter().any(|&c| contenders[c].2.bits()[i] == Level::Dominant);
                bus.push(if any_dom { Level::Dominant } else { base[i] });
            }
            bus.extend(std::iter::repeat_n(Level::Dominant, ERROR_FLAG_BITS as usize));
            bus.extend(std::iter::repeat_n(Level::Recessive, (ERROR_DELIMITER_BITS + INTERMISSION_BITS) as usize));
            let drives: Vec<(usize, Vec<Level>)> = contenders
                .iter()
                .enumerate()
                .map(|(ci, (p, _, b))| {
                    let stop = lost_at[ci].unwrap_or(k);
                    let mut lv = b.bits()[..=stop].to_vec();
                    if alive.contains(&ci) {
                        lv.resize(k + 1, Level::Recessive);
                        lv.extend(std::iter::repeat_n(Level::Dominant, ERROR_FLAG_BITS as usize));
                    }
                    (*p, lv)
                })
                .collect();
            self.capture_bits(now, &bus, &drives);
        }
        self.in_flight = Some(InFlight::Error);
        self.bus_free_at = now + total;
        self.queue.schedule(self.bus_free_at, C_FRAME_END, Event::FrameEnd)?;
        Ok(())
    }

    fn on_frame_end(&mut self) -> Result<(), SimError> {
        let now = self.now();
        let flight = self.in_flight.take();
        if let Some(InFlight::Frame { port, queued, sof, bits }) = flight {
            let frame = match decode_frame(bits.bits()) {
                Ok(f) => f.with_timestamp(sof),
                Err(e) => {
                    self.failure = Some(SimError::Invalid(format!("codec rejected its own frame: {e}")));
                    return Err(self.failure.take().unwrap());
                }
            };
            self.stats.frames += 1;
            let record = BusLogRecord {
                sof,
                end: now,
                frame: frame.clone(),
                source: self.port_name(port).to_string(),
                label: queued.label,
                verdict: None,
                errors: std::mem::take(&mut self.errors_since_frame),
            };
            let index = self.bus_log.len();
            self.notify(|| Notification::Bus(record.clone()));
            self.bus_log.push(record);

            if frame.dlc() >= 4 {
                let v = u32::from_be_bytes(frame.payload()[..4].try_into().unwrap());
                if self.ecus.iter().any(|e| e.life_id() == frame.id()) {
                    self.observed_life.insert(frame.id(), v);
                }
            }
            for i in 0..self.ecus.len() {
                if i == port || !self.ecus[i].rx_ids().any(|id| id == frame.id()) {
                    continue;
                }
                let delay = self.config.bitrate.ticks_ceil_us(self.ecus[i].config.reaction_us);
                let gen = self.gens[i];
                self.queue.schedule(now + delay, C_PROCESSING, Event::Rx { node: i, gen, frame: frame.clone() })?;
            }
            let rx = ReceivedFrame { frame, sof, end: now };
            for ci in 0..self.classifiers.len() {
                if let Some(v) = self.classifiers[ci].push(&rx)? {
                    let at = v.latency.verdict_time;
                    let entry = VerdictEntry { record: index, truth: queued.label, verdict: v };
                    self.queue.schedule(at, C_PROCESSING, Event::Verdict { classifier: ci, entry })?;
                }
            }
        }
        self.request_arbitration();
        Ok(())
    }

    // ---- monitor ---------------------------------------------------

    fn on_poll(&mut self) -> Result<(), SimError> {
        let now = self.now();
        let poll_ms = self.config.monitor.poll_ms;
        for i in 0..self.ecus.len() {
            let e = &self.ecus[i];
            let st = e.state();
            let observed = self.observed_life.get(&e.life_id()).copied();
            let expected = poll_ms / e.config.life_period_ms;
            let (delta, mut anomalies) = self.life_tracker.update(e.name(), observed, expected);
            let mut snap = StatusSnapshot {
                time: now,
                node: e.name().to_string(),
                life_counter: st.life_counter,
                observed_life: observed,
                life_delta: delta,
                expected_delta: expected,
                actuators: st.actuators.clone(),
                sensors: st.sensors.clone(),
                error_count: st.error_count,
                anomalies: Vec::new(),
            };
            for c in &self.config.monitor.checks {
                if let Some(m) = c.evaluate(&snap) {
                    anomalies.push(m);
                }
            }
            snap.anomalies = anomalies;
            self.notify(|| Notification::Status(snap.clone()));
            self.status_log.push(snap);
        }
        let poll = ms_ticks(self.config.bitrate, poll_ms);
        self.queue.schedule(now + poll, C_POLL, Event::Poll)?;
        Ok(())
    }
}
