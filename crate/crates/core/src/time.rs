//! Virtual time in bus bit times.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default CAN bitrate of the testbed (500 kbit/s).
pub const DEFAULT_BITRATE: u32 = 500_000;

const NANOS_PER_SEC: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitrateError {
    #[error("bitrate must be positive")]
    Zero,
    #[error("bitrate {0} bit/s does not give an integral bit time in nanoseconds")]
    NonIntegralBitTime(u32),
}

/// Bus bitrate in bit/s.
///
/// Restricted to rates whose bit time is a whole number of nanoseconds so
/// that tick <-> wall-unit conversions stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Bitrate(u32);

impl Bitrate {
    pub fn new(bits_per_sec: u32) -> Result<Self, BitrateError> {
        if bits_per_sec == 0 {
            return Err(BitrateError::Zero);
        }
        if !NANOS_PER_SEC.is_multiple_of(u64::from(bits_per_sec)) {
            return Err(BitrateError::NonIntegralBitTime(bits_per_sec));
        }
        Ok(Bitrate(bits_per_sec))
    }

    pub fn bits_per_sec(self) -> u32 {
        self.0
    }

    pub fn bit_time_ns(self) -> u64 {
        NANOS_PER_SEC / u64::from(self.0)
    }

    /// Whole ticks covering `ns`, rounded up.
    pub fn ticks_ceil_ns(self, ns: u64) -> u64 {
        ns.div_ceil(self.bit_time_ns())
    }

    /// Whole ticks covering a microsecond duration, rounded up.
    pub fn ticks_ceil_us(self, us: f64) -> u64 {
        if us <= 0.0 {
            return 0;
        }
        let ns = (us * 1_000.0).round() as u64;
        self.ticks_ceil_ns(ns)
    }

    pub fn ticks_from_ms(self, ms: f64) -> u64 {
        self.ticks_ceil_us(ms * 1_000.0)
    }
}

impl Default for Bitrate {
    fn default() -> Self {
        Bitrate(DEFAULT_BITRATE)
    }
}

impl TryFrom<u32> for Bitrate {
    type Error = BitrateError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Bitrate::new(v)
    }
}

impl From<Bitrate> for u32 {
    fn from(b: Bitrate) -> u32 {
        b.0
    }
}

impl fmt::Display for Bitrate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bit/s", self.0)
    }
}

/// Simulation time as a count of bus bit times since scenario start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_nanos(self, bitrate: Bitrate) -> u64 {
        self.0 * bitrate.bit_time_ns()
    }

    pub fn as_micros(self, bitrate: Bitrate) -> f64 {
        self.as_nanos(bitrate) as f64 / 1_000.0
    }

    pub fn as_millis(self, bitrate: Bitrate) -> f64 {
        self.as_nanos(bitrate) as f64 / 1_000_000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, ticks: u64) -> SimTime {
        SimTime(self.0 + ticks)
    }
}

impl std::ops::Sub for SimTime {
    type Output = u64;
    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}
