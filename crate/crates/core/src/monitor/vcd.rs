use std::fmt::Write;

use super::capture::{CaptureError, SignalTrace};
use crate::time::Bitrate;

/// Largest legal VCD timescale (1, 10 or 100 of s/ms/us/ns/ps/fs) that
/// divides the bit time, with the number of timescale units per tick.
pub fn vcd_timescale(bit_time_ns: u64) -> (u64, &'static str, u64) {
    const UNITS: [(&str, u64); 4] = [("s", 1_000_000_000), ("ms", 1_000_000), ("us", 1_000), ("ns", 1)];
    for (unit, ns) in UNITS {
        for mag in [100, 10, 1] {
            let step = mag * ns;
            if bit_time_ns.is_multiple_of(step) {
                return (mag, unit, bit_time_ns / step);
            }
        }
    }
    unreachable!("1 ns divides every integral bit time")
}

fn ident(mut i: usize) -> String {
    // Printable ASCII '!'..='~', little-endian base 94.
    let mut s = String::new();
    loop {
        s.push(char::from(b'!' + (i % 94) as u8));
        i /= 94;
        if i == 0 {
            return s;
        }
        i -= 1;
    }
}

fn value_text(width: u32, v: u64, id: &str) -> String {
    if width == 1 {
        format!("{}{id}", v & 1)
    } else {
        format!("b{v:b} {id}")
    }
}

/// Render a capture as a value change dump. Signals named `scope.name`
/// are placed in a scope; times are absolute.
pub fn export_vcd(trace: &SignalTrace, bitrate: Bitrate) -> Result<String, CaptureError> {
    if trace.signals().is_empty() || trace.sample_count() == 0 {
        return Err(CaptureError::EmptyTrace);
    }
    let (mag, unit, per_tick) = vcd_timescale(bitrate.bit_time_ns());
    let mut out = String::new();
    writeln!(out, "$version cantestbed {} $end", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "$comment bit time {} ns $end", bitrate.bit_time_ns()).unwrap();
    writeln!(out, "$timescale {mag} {unit} $end").unwrap();
    writeln!(out, "$scope module can $end").unwrap();
    let ids: Vec<String> = (0..trace.signals().len()).map(ident).collect();
    let mut scoped: Vec<(Option<&str>, &str, usize)> = trace
        .signals()
        .iter()
        .enumerate()
        .map(|(i, s)| match s.name.split_once('.') {
            Some((scope, leaf)) => (Some(scope), leaf, i),
            None => (None, s.name.as_str(), i),
        })
        .collect();
    scoped.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut open: Option<&str> = None;
    for (scope, leaf, i) in scoped {
        if scope != open {
            if open.is_some() {
                writeln!(out, "$upscope $end").unwrap();
            }
            if let Some(s) = scope {
                writeln!(out, "$scope module {s} $end").unwrap();
            }
            open = scope;
        }
        let w = trace.signals()[i].width;
        let kind = if w == 1 { "wire" } else { "reg" };
        writeln!(out, "$var {kind} {w} {} {leaf} $end", ids[i]).unwrap();
    }
    if open.is_some() {
        writeln!(out, "$upscope $end").unwrap();
    }
    writeln!(out, "$upscope $end").unwrap();
    writeln!(out, "$enddefinitions $end").unwrap();

    let t0 = trace.start().ticks() * per_tick;
    writeln!(out, "#{t0}").unwrap();
    writeln!(out, "$dumpvars").unwrap();
    for (i, s) in trace.signals().iter().enumerate() {
        writeln!(out, "{}", value_text(s.width, trace.changes(i)[0].1, &ids[i])).unwrap();
    }
    writeln!(out, "$end").unwrap();

    let mut events: Vec<(u64, usize, u64)> = Vec::new();
    for i in 0..trace.signals().len() {
        events.extend(trace.changes(i)[1..].iter().map(|&(t, v)| (t.ticks(), i, v)));
    }
    events.sort_unstable();
    let mut current = None;
    for (t, i, v) in events {
        if current != Some(t) {
            writeln!(out, "#{}", t * per_tick).unwrap();
            current = Some(t);
        }
        writeln!(out, "{}", value_text(trace.signals()[i].width, v, &ids[i])).unwrap();
    }
    writeln!(out, "#{}", trace.end().ticks() * per_tick).unwrap();
    Ok(out)
}
