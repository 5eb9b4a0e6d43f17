use serde::{Deserialize, Serialize};

use super::{crc15, CanError, CanFrame};

/// Logical bus level. Dominant is logical 0 and overrides recessive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Level {
    Dominant = 0,
    Recessive = 1,
}

impl Level {
    pub fn from_bit(bit: bool) -> Level {
        if bit {
            Level::Recessive
        } else {
            Level::Dominant
        }
    }

    pub fn bit(self) -> bool {
        self == Level::Recessive
    }

    pub fn flip(self) -> Level {
        match self {
            Level::Dominant => Level::Recessive,
            Level::Recessive => Level::Dominant,
        }
    }
}

pub(super) const EOF_BITS: usize = 7;
pub(super) const INTERMISSION_BITS: usize = 3;
/// CRC delimiter, ACK slot, ACK delimiter.
const DELIM_ACK_BITS: usize = 3;

/// Transmitted bit sequence of one frame, SOF through intermission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameBitstream {
    bits: Vec<Level>,
    stuff_count: u32,
    nominal_bits: u32,
    stuffed_len: usize,
}

impl FrameBitstream {
    pub fn bits(&self) -> &[Level] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn stuff_count(&self) -> u32 {
        self.stuff_count
    }

    /// Field-width sum before stuffing, EOF and intermission included.
    pub fn nominal_bits(&self) -> u32 {
        self.nominal_bits
    }

    /// Length of the stuffed SOF..CRC region, stuff bits included.
    pub fn stuffed_len(&self) -> usize {
        self.stuffed_len
    }

    pub fn ack_slot(&self) -> usize {
        self.stuffed_len + 1
    }

    /// The same frame as seen on the bus when at least one receiver drives
    /// the ACK slot dominant.
    pub fn acknowledged(&self) -> FrameBitstream {
        let mut out = self.clone();
        out.bits[self.ack_slot()] = Level::Dominant;
        out
    }
}

fn push_bits(out: &mut Vec<Level>, value: u32, width: u32) {
    for i in (0..width).rev() {
        out.push(Level::from_bit(value >> i & 1 == 1));
    }
}

/// Unstuffed SOF..DATA bits, the CRC input.
fn header_and_data(frame: &CanFrame) -> Vec<Level> {
    let mut bits = Vec::with_capacity(19 + 64);
    bits.push(Level::Dominant); // SOF
    push_bits(&mut bits, u32::from(frame.id()), 11);
    bits.push(Level::from_bit(frame.is_remote()));
    bits.push(Level::Dominant); // IDE: standard format
    bits.push(Level::Dominant); // r0
    push_bits(&mut bits, u32::from(frame.dlc()), 4);
    for &b in frame.payload() {
        push_bits(&mut bits, u32::from(b), 8);
    }
    bits
}

/// Serialize a frame into the bit sequence its transmitter drives.
///
/// The ACK slot is left recessive; [`FrameBitstream::acknowledged`] gives
/// the bus-level view.
pub fn encode_frame(frame: &CanFrame) -> FrameBitstream {
    let mut raw = header_and_data(frame);
    let crc = crc15(raw.iter().copied());
    push_bits(&mut raw, u32::from(crc), 15);

    let mut bits = Vec::with_capacity(raw.len() + raw.len() / 4 + 14);
    let mut stuff_count = 0u32;
    let mut run_level = Level::Dominant;
    let mut run_len = 0usize;
    for &b in &raw {
        bits.push(b);
        if b == run_level {
            run_len += 1;
        } else {
            run_level = b;
            run_len = 1;
        }
        if run_len == 5 {
            run_level = run_level.flip();
            bits.push(run_level);
            run_len = 1;
            stuff_count += 1;
        }
    }
    let stuffed_len = bits.len();
    let nominal = raw.len() + DELIM_ACK_BITS + EOF_BITS + INTERMISSION_BITS;
    bits.extend(std::iter::repeat_n(Level::Recessive, DELIM_ACK_BITS + EOF_BITS + INTERMISSION_BITS));
    FrameBitstream {
        bits,
        stuff_count,
        nominal_bits: nominal as u32,
        stuffed_len,
    }
}

struct Destuffer<'a> {
    bits: &'a [Level],
    pos: usize,
    run_level: Level,
    run_len: usize,
    stuff_count: u32,
}

impl<'a> Destuffer<'a> {
    fn new(bits: &'a [Level]) -> Self {
        Destuffer {
            bits,
            pos: 0,
            run_level: Level::Dominant,
            run_len: 0,
            stuff_count: 0,
        }
    }

    fn raw(&mut self, field: &'static str) -> Result<Level, CanError> {
        let b = *self.bits.get(self.pos).ok_or(CanError::Form {
            field,
            bit: self.pos,
        })?;
        self.pos += 1;
        Ok(b)
    }

    /// Consume a pending stuff bit, if five equal bits precede it.
    fn skip_stuff(&mut self, field: &'static str) -> Result<(), CanError> {
        if self.run_len == 5 {
            let at = self.pos;
            let b = self.raw(field)?;
            if b == self.run_level {
                return Err(CanError::Stuff { bit: at });
            }
            self.run_level = b;
            self.run_len = 1;
            self.stuff_count += 1;
        }
        Ok(())
    }

    fn next(&mut self, field: &'static str) -> Result<Level, CanError> {
        self.skip_stuff(field)?;
        let b = self.raw(field)?;
        if b == self.run_level {
            self.run_len += 1;
        } else {
            self.run_level = b;
            self.run_len = 1;
        }
        Ok(b)
    }

    fn take(&mut self, width: u32, field: &'static str, raw: &mut Vec<Level>) -> Result<u32, CanError> {
        let mut v = 0u32;
        for _ in 0..width {
            let b = self.next(field)?;
            raw.push(b);
            v = (v << 1) | u32::from(b.bit());
        }
        Ok(v)
    }
}

/// Parse a stuffed bit sequence back into a frame, checking stuffing, CRC
/// and the fixed-form fields. The ACK slot may be either level.
pub fn decode_frame(bits: &[Level]) -> Result<CanFrame, CanError> {
    let mut rd = Destuffer::new(bits);
    let mut raw = Vec::with_capacity(83);

    if rd.next("sof")? != Level::Dominant {
        return Err(CanError::Form { field: "sof", bit: 0 });
    }
    raw.push(Level::Dominant);
    let id = rd.take(11, "identifier", &mut raw)? as u16;
    let rtr = rd.take(1, "rtr", &mut raw)? == 1;
    let ide_at = rd.pos;
    if rd.take(1, "ide", &mut raw)? == 1 {
        // Extended frames are outside the supported format.
        return Err(CanError::Form { field: "ide", bit: ide_at });
    }
    rd.take(1, "r0", &mut raw)?;
    let dlc_at = rd.pos;
    let dlc = rd.take(4, "dlc", &mut raw)? as u8;
    if dlc > 8 {
        return Err(CanError::Form { field: "dlc", bit: dlc_at });
    }
    let mut payload = [0u8; 8];
    if !rtr {
        for byte in payload.iter_mut().take(usize::from(dlc)) {
            *byte = rd.take(8, "data", &mut raw)? as u8;
        }
    }
    let computed = crc15(raw.iter().copied());
    let mut scratch = Vec::with_capacity(15);
    let received = rd.take(15, "crc", &mut scratch)? as u16;
    rd.skip_stuff("crc")?;
    if computed != received {
        return Err(CanError::Crc { computed, received });
    }

    let expect_recessive = |rd: &mut Destuffer<'_>, field: &'static str| -> Result<(), CanError> {
        let at = rd.pos;
        match rd.raw(field)? {
            Level::Recessive => Ok(()),
            Level::Dominant => Err(CanError::Form { field, bit: at }),
        }
    };
    expect_recessive(&mut rd, "crc delimiter")?;
    rd.raw("ack slot")?;
    expect_recessive(&mut rd, "ack delimiter")?;
    for _ in 0..EOF_BITS {
        expect_recessive(&mut rd, "eof")?;
    }
    for _ in 0..INTERMISSION_BITS {
        expect_recessive(&mut rd, "intermission")?;
    }
    if rd.pos != bits.len() {
        return Err(CanError::Form {
            field: "trailing bits",
            bit: rd.pos,
        });
    }

    if rtr {
        CanFrame::remote(id, dlc)
    } else {
        CanFrame::new(id, &payload[..usize::from(dlc)])
    }
}
