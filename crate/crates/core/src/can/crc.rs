use super::Level;

/// CAN 2.0 generator x^15 + x^14 + x^10 + x^8 + x^7 + x^4 + x^3 + 1.
pub const CRC15_POLY: u16 = 0x4599;

/// CRC-15 over a sequence of unstuffed bits, MSB-first shift register.
pub fn crc15(bits: impl IntoIterator<Item = Level>) -> u16 {
    let mut crc: u16 = 0;
    for bit in bits {
        let next = (bit == Level::Recessive) ^ (crc & 0x4000 != 0);
        crc = (crc << 1) & 0x7FFF;
        if next {
            crc ^= CRC15_POLY;
        }
    }
    crc
}
