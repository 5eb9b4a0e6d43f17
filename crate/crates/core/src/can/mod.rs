//! CAN 2.0A framing at bit level.
//!
//! Frames are standard (11-bit identifier) data or remote frames. The codec
//! produces the full bit sequence a transmitter drives, from start-of-frame
//! through the 3-bit intermission, with bit stuffing applied over the
//! SOF..CRC region and the CRC-15 generator of CAN 2.0.

mod arbitration;
mod codec;
mod crc;
mod frame;
mod timing;

pub use arbitration::{arbitration_winner, first_divergence};
pub use codec::{decode_frame, encode_frame, FrameBitstream, Level};
pub use crc::{crc15, CRC15_POLY};
pub use frame::{CanFrame, MAX_DLC, MAX_STD_ID};
pub use timing::{
    frame_duration, frame_duration_us, nominal_bits, stuffable_bits, worst_case_bits,
    StuffingBound,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("stuff error at bit {bit}")]
    Stuff { bit: usize },
    #[error("crc mismatch: computed {computed:#06x}, received {received:#06x}")]
    Crc { computed: u16, received: u16 },
    #[error("form error in {field} at bit {bit}")]
    Form { field: &'static str, bit: usize },
    #[error("duplicate identifier {0:#05x} in arbitration")]
    DuplicateId(u16),
    #[error("arbitration needs at least one contender")]
    NoContenders,
}
