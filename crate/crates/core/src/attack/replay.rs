//! Labelled CAN trace files in the CAR-Hacking CSV layout.
//!
//! ```text
//! # attack=DoS
//! 1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R
//! 1478198376.389636,0000,8,00,00,00,00,00,00,00,00,T
//! 1478198376.389850,0545,8,d8,00,00,8a,00,00,00,00,T,Fuzzing
//! ```
//!
//! `R` marks benign traffic and `T` injected traffic. The attack class of a
//! `T` record comes from an optional trailing column, else from a
//! `# attack=<class>` header line, else from the loader's default.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::can::CanFrame;
use crate::TrafficClass;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace contains no records")]
    EmptyTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub timestamp_ns: u64,
    pub frame: CanFrame,
    pub label: TrafficClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReplayTrace {
    pub records: Vec<ReplayRecord>,
}

impl ReplayTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record count per class, indexed by [`TrafficClass::index`].
    pub fn label_counts(&self) -> [u64; 4] {
        let mut c = [0u64; 4];
        for r in &self.records {
            c[r.label.index()] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    /// Class given to `T` records that carry no attack type.
    pub default_attack: Option<TrafficClass>,
}

fn parse_timestamp(s: &str) -> Result<u64, String> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad timestamp `{s}`"));
    }
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad timestamp fraction `{s}`"));
    }
    let secs: u64 = int.parse().map_err(|_| format!("timestamp `{s}` out of range"))?;
    let mut ns: u64 = 0;
    for (i, b) in frac.bytes().enumerate() {
        ns += u64::from(b - b'0') * 10u64.pow(8 - i as u32);
    }
    secs.checked_mul(1_000_000_000)
        .and_then(|v| v.checked_add(ns))
        .ok_or_else(|| format!("timestamp `{s}` out of range"))
}

pub fn format_timestamp(ns: u64) -> String {
    let secs = ns / 1_000_000_000;
    let frac = ns % 1_000_000_000;
    if frac.is_multiple_of(1_000) {
        format!("{secs}.{:06}", frac / 1_000)
    } else {
        format!("{secs}.{frac:09}")
    }
}

fn parse_line(
    line: &str,
    file_attack: Option<TrafficClass>,
    opts: &ReplayOptions,
) -> Result<ReplayRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 4 {
        return Err(format!("expected at least 4 fields, found {}", fields.len()));
    }
    let timestamp_ns = parse_timestamp(fields[0])?;
    let id = u16::from_str_radix(fields[1], 16).map_err(|_| format!("bad CAN id `{}`", fields[1]))?;
    let dlc: usize = fields[2].parse().map_err(|_| format!("bad dlc `{}`", fields[2]))?;
    if dlc > 8 {
        return Err(format!("dlc {dlc} exceeds 8"));
    }
    let rest = &fields[3..];
    if rest.len() < dlc + 1 {
        return Err(format!("dlc {dlc} but only {} data bytes before the flag", rest.len().saturating_sub(1)));
    }
    let mut payload = Vec::with_capacity(dlc);
    for b in &rest[..dlc] {
        payload.push(u8::from_str_radix(b, 16).map_err(|_| format!("bad data byte `{b}`"))?);
    }
    let flag = rest[dlc];
    let extra = &rest[dlc + 1..];
    if extra.len() > 1 {
        return Err(format!(
            "dlc {dlc} does not match {} trailing fields",
            rest.len() - 1
        ));
    }
    let label = match flag {
        "R" => {
            if let Some(x) = extra.first() {
                let c: TrafficClass = x.parse()?;
                if c != TrafficClass::Benign {
                    return Err(format!("benign flag with attack type `{x}`"));
                }
            }
            TrafficClass::Benign
        }
        "T" => {
            let c = match extra.first() {
                Some(x) => x.parse()?,
                None => file_attack
                    .or(opts.default_attack)
                    .ok_or_else(|| "injected record without attack type".to_string())?,
            };
            if c == TrafficClass::Benign {
                return Err("injected record labelled benign".into());
            }
            c
        }
        other => {
            // A flag position holding a hex byte means more data than dlc.
            if u8::from_str_radix(other, 16).is_ok() {
                return Err(format!("dlc {dlc} does not match payload length"));
            }
            return Err(format!("unknown flag `{other}`"));
        }
    };
    let frame = CanFrame::new(id, &payload).map_err(|e| e.to_string())?;
    Ok(ReplayRecord {
        timestamp_ns,
        frame,
        label,
    })
}

/// Parse a trace; timestamps must be non-decreasing.
pub fn parse_replay(text: &str, opts: &ReplayOptions) -> Result<ReplayTrace, ReplayError> {
    let mut records: Vec<ReplayRecord> = Vec::new();
    let mut file_attack = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("attack=") {
                file_attack = Some(v.parse().map_err(|m| ReplayError::Parse {
                    line: line_no,
                    message: m,
                })?);
            }
            continue;
        }
        let rec = parse_line(line, file_attack, opts).map_err(|message| ReplayError::Parse {
            line: line_no,
            message,
        })?;
        if let Some(prev) = records.last() {
            if rec.timestamp_ns < prev.timestamp_ns {
                return Err(ReplayError::Parse {
                    line: line_no,
                    message: "timestamp goes backwards".into(),
                });
            }
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(ReplayError::EmptyTrace);
    }
    Ok(ReplayTrace { records })
}

pub fn load_replay(path: &Path, opts: &ReplayOptions) -> Result<ReplayTrace, ReplayError> {
    parse_replay(&std::fs::read_to_string(path)?, opts)
}

pub const CSV_HEADER: &str = "# timestamp,can_id,dlc,data...,flag,attack_type";

/// Serialise records in the same layout; attack records carry their class
/// in the trailing column.
pub fn write_replay<'a>(records: impl IntoIterator<Item = &'a ReplayRecord>) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        write!(out, "{},{:04x},{}", format_timestamp(r.timestamp_ns), r.frame.id(), r.frame.dlc()).unwrap();
        for b in r.frame.payload() {
            write!(out, ",{b:02x}").unwrap();
        }
        if r.label == TrafficClass::Benign {
            out.push_str(",R\n");
        } else {
            writeln!(out, ",T,{}", r.label.name()).unwrap();
        }
    }
    out
}
