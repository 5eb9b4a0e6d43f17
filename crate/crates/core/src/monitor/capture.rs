use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

pub const DEFAULT_CAPTURE_SAMPLES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptureError {
    #[error("capture needs {needed} samples, buffer holds {limit}")]
    Overflow { needed: u64, limit: u64 },
    #[error("capture window or signal list is empty")]
    EmptyTrace,
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalDecl {
    pub name: String,
    pub width: u32,
}

/// Per-bit-time samples of a fixed set of signals over `[start, end)`,
/// stored as change lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalTrace {
    start: SimTime,
    end: SimTime,
    signals: Vec<SignalDecl>,
    /// Per signal: `(time, value)` with strictly increasing times, first
    /// entry at `start`.
    changes: Vec<Vec<(SimTime, u64)>>,
}

impl SignalTrace {
    /// `initial` gives each signal's value at `start`.
    pub fn new(
        start: SimTime,
        end: SimTime,
        signals: Vec<(SignalDecl, u64)>,
        limit: u64,
    ) -> Result<SignalTrace, CaptureError> {
        if end <= start || signals.is_empty() {
            return Err(CaptureError::EmptyTrace);
        }
        let needed = (end - start).saturating_mul(signals.len() as u64);
        if needed > limit {
            return Err(CaptureError::Overflow { needed, limit });
        }
        let (signals, changes) = signals
            .into_iter()
            .map(|(d, v)| (d, vec![(start, v)]))
            .unzip();
        Ok(SignalTrace {
            start,
            end,
            signals,
            changes,
        })
    }

    pub fn start(&self) -> SimTime {
        self.start
    }

    pub fn end(&self) -> SimTime {
        self.end
    }

    pub fn signals(&self) -> &[SignalDecl] {
        &self.signals
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.name == name)
    }

    /// Samples per signal (one per bit time).
    pub fn sample_count(&self) -> u64 {
        self.end - self.start
    }

    pub fn covers(&self, from: SimTime, to: SimTime) -> bool {
        from < self.end && to >= self.start
    }

    /// Set signal `idx` to `value` from `t` on. Times before the window
    /// update the initial value; times at or past the end are dropped.
    /// Calls for one signal must come in non-decreasing time order.
    pub fn record(&mut self, idx: usize, t: SimTime, value: u64) {
        if t >= self.end {
            return;
        }
        let c = &mut self.changes[idx];
        let t = t.max(self.start);
        let last = c.last_mut().expect("initial entry");
        if last.0 == t {
            last.1 = value;
            // Collapse a change that reverted to the previous value.
            if c.len() >= 2 && c[c.len() - 2].1 == value {
                c.pop();
            }
        } else if last.1 != value {
            debug_assert!(t > last.0);
            c.push((t, value));
        }
    }

    pub fn value_at(&self, idx: usize, t: SimTime) -> Option<u64> {
        if t < self.start || t >= self.end {
            return None;
        }
        let c = &self.changes[idx];
        let k = c.partition_point(|(ct, _)| *ct <= t);
        Some(c[k - 1].1)
    }

    /// Change list of one signal, initial value first.
    pub fn changes(&self, idx: usize) -> &[(SimTime, u64)] {
        &self.changes[idx]
    }

    /// Expand one signal to one value per bit time.
    pub fn samples(&self, idx: usize) -> Vec<u64> {
        let c = &self.changes[idx];
        let mut out = Vec::with_capacity(self.sample_count() as usize);
        for (k, &(t, v)) in c.iter().enumerate() {
            let until = c.get(k + 1).map_or(self.end, |n| n.0);
            out.extend(std::iter::repeat_n(v, (until - t) as usize));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decl(name: &str) -> (SignalDecl, u64) {
        (SignalDecl { name: name.into(), width: 1 }, 1)
    }

    #[test]
    fn sample_count_matches_window() {
        let mut t = SignalTrace::new(SimTime(10), SimTime(30), vec![decl("bus")], 100).unwrap();
        t.record(0, SimTime(5), 1);
        t.record(0, SimTime(12), 0);
        t.record(0, SimTime(13), 1);
        t.record(0, SimTime(40), 0);
        let s = t.samples(0);
        assert_eq!(s.len(), 20);
        assert_eq!(s[2], 0);
        assert_eq!(s.iter().filter(|v| **v == 0).count(), 1);
        assert_eq!(t.value_at(0, SimTime(12)), Some(0));
        assert_eq!(t.value_at(0, SimTime(30)), None);
    }

    #[test]
    fn overflow_is_explicit() {
        let e = SignalTrace::new(SimTime(0), SimTime(600), vec![decl("a"), decl("b")], 1000);
        assert_eq!(e, Err(CaptureError::Overflow { needed: 1200, limit: 1000 }));
        assert_eq!(SignalTrace::new(SimTime(5), SimTime(5), vec![decl("a")], 10), Err(CaptureError::EmptyTrace));
    }

    #[test]
    fn same_tick_overwrite_collapses() {
        let mut t = SignalTrace::new(SimTime(0), SimTime(10), vec![decl("a")], 100).unwrap();
        t.record(0, SimTime(3), 0);
        t.record(0, SimTime(3), 1);
        assert_eq!(t.changes(0), &[(SimTime(0), 1)]);
    }
}
