#![no_main]

use cantestbed::attack::{parse_replay, write_replay, ReplayOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let opts = ReplayOptions::default();
    if let Ok(trace) = parse_replay(text, &opts) {
        assert!(trace.records.windows(2).all(|w| w[0].timestamp_ns <= w[1].timestamp_ns));
        let back = parse_replay(&write_replay(&trace.records), &opts).expect("written trace parses");
        assert_eq!(back, trace);
    }
});
