//! What a run records, and how it is scored.

mod buslog;
mod capture;
mod latency;
mod metrics;
mod status;
mod vcd;

pub use buslog::{export_csv, BusLogRecord};
pub use capture::{CaptureError, SignalDecl, SignalTrace, DEFAULT_CAPTURE_SAMPLES};
pub use latency::LatencySummary;
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};
pub use status::{CmpOp, LifeTracker, StatusCheck, StatusSnapshot, LIFE_SIGNAL_LOST};
pub use vcd::{export_vcd, vcd_timescale};
