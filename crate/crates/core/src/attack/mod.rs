//! Attack injection: DoS flooding, fuzzing, targeted spoofing and trace
//! replay, plus heuristic tagging of known attacks in captured traffic.
//!
//! The attack node has its own bus port. Profiles describe what to inject;
//! the simulation engine owns the timing and drives [`AttackRuntime`].

mod replay;
mod tag;

pub use replay::{
    format_timestamp, load_replay, parse_replay, write_replay, ReplayError, ReplayOptions,
    ReplayRecord, ReplayTrace, CSV_HEADER,
};
pub use tag::{tag_known_attacks, KnownTag};

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::can::{CanFrame, MAX_STD_ID};
use crate::TrafficClass;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("an attack of kind {0} is already active")]
    ConflictingAttack(&'static str),
    #[error("invalid attack profile: {0}")]
    InvalidProfile(String),
    #[error("unknown attack handle {0}")]
    UnknownHandle(u32),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttackHandle(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadDistribution {
    /// Uniform random bytes at the configured DLC.
    #[default]
    Uniform,
    /// Uniform random DLC in 0..=8, then uniform bytes.
    UniformDlc,
    Zero,
}

fn default_eight() -> u8 {
    8
}
fn default_max_id() -> u16 {
    MAX_STD_ID
}
fn default_zero_payload() -> Vec<u8> {
    vec![0; 8]
}
fn default_time_scale() -> f64 {
    1.0
}

/// What to inject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AttackProfile {
    /// Back-to-back frames with a high-priority identifier.
    DosFlood {
        #[serde(default)]
        id: u16,
        #[serde(default = "default_zero_payload")]
        payload: Vec<u8>,
    },
    /// Random identifiers and payloads at a fixed rate.
    Fuzz {
        rate_hz: f64,
        #[serde(default)]
        id_min: u16,
        #[serde(default = "default_max_id")]
        id_max: u16,
        #[serde(default = "default_eight")]
        dlc: u8,
        #[serde(default)]
        payload: PayloadDistribution,
    },
    /// Forged copies of a legitimate message on a fixed schedule.
    Spoof {
        #[serde(default)]
        id: Option<u16>,
        /// Message name from the scenario's message map, alternative to `id`.
        #[serde(default)]
        message: Option<String>,
        payload: Vec<u8>,
        period_ms: f64,
        #[serde(default)]
        count: Option<u32>,
    },
    /// Re-inject a recorded trace.
    Replay {
        path: PathBuf,
        #[serde(default = "default_time_scale")]
        time_scale: f64,
        #[serde(default)]
        default_attack: Option<TrafficClass>,
    },
}

impl AttackProfile {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AttackProfile::DosFlood { .. } => "DosFlood",
            AttackProfile::Fuzz { .. } => "Fuzz",
            AttackProfile::Spoof { .. } => "Spoof",
            AttackProfile::Replay { .. } => "Replay",
        }
    }

    /// Ground-truth label of injected frames (replay uses per-record labels).
    pub fn label(&self) -> Option<TrafficClass> {
        match self {
            AttackProfile::DosFlood { .. } => Some(TrafficClass::Dos),
            AttackProfile::Fuzz { .. } => Some(TrafficClass::Fuzzing),
            AttackProfile::Spoof { .. } => Some(TrafficClass::Spoof),
            AttackProfile::Replay { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::InvalidProfile(m));
        match self {
            AttackProfile::DosFlood { id, payload } => {
                if CanFrame::new(*id, payload).is_err() {
                    return bad(format!("flood frame id={id:#x} with {} bytes is not a valid frame", payload.len()));
                }
            }
            AttackProfile::Fuzz { rate_hz, id_min, id_max, dlc, .. } => {
                if !(rate_hz.is_finite() && *rate_hz > 0.0) {
                    return bad("fuzz rate must be positive".into());
                }
                if id_min > id_max || *id_max > MAX_STD_ID {
                    return bad(format!("fuzz id range {id_min:#x}..={id_max:#x} invalid"));
                }
                if *dlc > 8 {
                    return bad(format!("fuzz dlc {dlc} exceeds 8"));
                }
            }
            AttackProfile::Spoof { id, message, payload, period_ms, count } => {
                if id.is_none() == message.is_none() {
                    return bad("spoof needs exactly one of `id` or `message`".into());
                }
                if CanFrame::new(id.unwrap_or(0), payload).is_err() {
                    return bad("spoof frame is not a valid frame".into());
                }
                if !(period_ms.is_finite() && *period_ms > 0.0) {
                    return bad("spoof period must be positive".into());
                }
                if *count == Some(0) {
                    return bad("spoof count must be positive".into());
                }
            }
            AttackProfile::Replay { time_scale, .. } => {
                if !(time_scale.is_finite() && *time_scale > 0.0) {
                    return bad("replay time_scale must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// A profile plus optional run length and random-stream name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub profile: AttackProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_stream: Option<String>,
}

impl From<AttackProfile> for AttackSpec {
    fn from(profile: AttackProfile) -> Self {
        AttackSpec {
            profile,
            duration_ms: None,
            seed_stream: None,
        }
    }
}

/// Random frame source for fuzzing.
#[derive(Debug, Clone)]
pub struct FuzzGenerator {
    rng: ChaCha8Rng,
    id_min: u16,
    id_max: u16,
    dlc: u8,
    payload: PayloadDistribution,
}

impl FuzzGenerator {
    pub fn new(rng: ChaCha8Rng, id_min: u16, id_max: u16, dlc: u8, payload: PayloadDistribution) -> Self {
        FuzzGenerator {
            rng,
            id_min,
            id_max,
            dlc,
            payload,
        }
    }

    pub fn next_frame(&mut self) -> CanFrame {
        let id = self.rng.gen_range(self.id_min..=self.id_max);
        let dlc = match self.payload {
            PayloadDistribution::UniformDlc => self.rng.gen_range(0..=8u8),
            _ => self.dlc,
        };
        let mut data = [0u8; 8];
        if self.payload != PayloadDistribution::Zero {
            self.rng.fill(&mut data[..usize::from(dlc)]);
        }
        CanFrame::new(id, &data[..usize::from(dlc)]).expect("generator stays in range")
    }
}

/// Engine-side state of one running attack.
#[derive(Debug, Clone)]
pub enum AttackRuntime {
    Dos {
        frame: CanFrame,
    },
    Fuzz {
        generator: FuzzGenerator,
        interval_ticks: u64,
    },
    Spoof {
        frame: CanFrame,
        interval_ticks: u64,
        remaining: Option<u32>,
    },
    Replay {
        trace: std::sync::Arc<ReplayTrace>,
        next: usize,
        time_scale: f64,
        /// Tick of the first record.
        origin: u64,
    },
}
