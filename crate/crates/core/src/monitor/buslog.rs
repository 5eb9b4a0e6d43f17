use serde::{Deserialize, Serialize};

use crate::attack::{write_replay, ReplayRecord};
use crate::can::CanFrame;
use crate::time::{Bitrate, SimTime};
use crate::TrafficClass;

/// One completed frame as seen on the bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusLogRecord {
    pub sof: SimTime,
    /// End of intermission.
    pub end: SimTime,
    pub frame: CanFrame,
    pub source: String,
    pub label: TrafficClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<TrafficClass>,
    /// Error frames on the bus since the previous completed frame.
    pub errors: u32,
}

/// Render a bus log in the replay CSV layout, timestamps taken from SOF.
pub fn export_csv(log: &[BusLogRecord], bitrate: Bitrate) -> String {
    let records: Vec<ReplayRecord> = log
        .iter()
        .map(|r| ReplayRecord {
            timestamp_ns: r.sof.as_nanos(bitrate),
            frame: r.frame.clone().without_timestamp(),
            label: r.label,
        })
        .collect();
    write_replay(&records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{parse_replay, ReplayOptions, CSV_HEADER};

    fn rec(sof: u64, id: u16, label: TrafficClass) -> BusLogRecord {
        BusLogRecord {
            sof: SimTime(sof),
            end: SimTime(sof + 120),
            frame: CanFrame::new(id, &[id as u8, 7]).unwrap(),
            source: "ECU1".into(),
            label,
            verdict: None,
            errors: 0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let log = vec![
            rec(0, 0x120, TrafficClass::Benign),
            rec(130, 0x000, TrafficClass::Dos),
            rec(261, 0x5A1, TrafficClass::Fuzzing),
            rec(999, 0x0A0, TrafficClass::Spoof),
        ];
        let b = Bitrate::default();
        let back = parse_replay(&export_csv(&log, b), &ReplayOptions::default()).unwrap();
        assert_eq!(back.len(), log.len());
        for (r, l) in back.records.iter().zip(&log) {
            assert_eq!(r.frame, l.frame);
            assert_eq!(r.label, l.label);
            assert_eq!(r.timestamp_ns, l.sof.as_nanos(b));
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(export_csv(&[], Bitrate::default()), format!("{CSV_HEADER}\n"));
    }
}
