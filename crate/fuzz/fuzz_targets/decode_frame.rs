#![no_main]

use cantestbed::can::{decode_frame, encode_frame, Level};
use libfuzzer_sys::fuzz_target;

// One input byte per bus bit; the low bit is the level.
fuzz_target!(|data: &[u8]| {
    let bits: Vec<Level> = data.iter().map(|b| Level::from_bit(b & 1 == 1)).collect();
    if let Ok(frame) = decode_frame(&bits) {
        let again = encode_frame(&frame);
        assert_eq!(decode_frame(again.bits()).as_ref(), Ok(&frame));
    }
});
