//! Discrete-event engine and the virtual wired-AND bus.

mod bus;
mod engine;
mod queue;

pub use bus::{resolve_bus, Drive};
pub use engine::{
    Action, CaptureConfig, IdsConfig, MonitorConfig, Notification, RunStats, SimConfig, SimError,
    Simulation, VerdictEntry, ATTACKER_PORT,
};
pub use queue::{EventQueue, PastEvent};
