//! Software CAN security testbed.
//!
//! A deterministic, bit-time resolution simulation of a small vehicle
//! network: a wired-AND CAN bus, functional ECUs, an attack-injection node,
//! and a 4-bit quantised MLP intrusion detector that can sit either behind
//! an ECU or directly on a CAN controller's receive path.

pub mod attack;
pub mod can;
mod class;
pub mod ecu;
pub mod ids;
pub mod monitor;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod time;

pub use class::TrafficClass;
pub use time::{Bitrate, SimTime};
