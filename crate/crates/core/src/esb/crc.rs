//! CRC-16/CCITT-FALSE as used by the nRF24L01 in 2-byte CRC mode.
//!
//! Polynomial 0x1021, initial value 0xFFFF, no reflection, no final XOR. The
//! radio computes it over the address, packet control field and payload, which
//! is not a whole number of octets, so the API works on bit sequences.

use super::Bitstream;

pub const POLY: u16 = 0x1021;
pub const INIT: u16 = 0xFFFF;

const TABLE: [u16; 256] = build_table();

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut k = 0;
        while k < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ POLY
            } else {
                crc << 1
            };
            k += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// Incremental CRC register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crc16 {
    state: u16,
}

impl Default for Crc16 {
    fn default() -> Self {
        Self::new()
    }
}

impl Crc16 {
    pub const fn new() -> Self {
        Crc16 { state: INIT }
    }

    #[inline]
    pub fn update_byte(&mut self, byte: u8) {
        let idx = ((self.state >> 8) as u8 ^ byte) as usize;
        self.state = (self.state << 8) ^ TABLE[idx];
    }

    pub fn update_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.update_byte(b);
        }
    }

    #[inline]
    pub fn update_bit(&mut self, bit: bool) {
        let feedback = (self.state >> 15 == 1) ^ bit;
        self.state <<= 1;
        if feedback {
            self.state ^= POLY;
        }
    }

    /// Feeds the low `count` bits of `value`, most significant first.
    pub fn update_bits(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            self.update_bit((value >> i) & 1 == 1);
        }
    }

    pub fn value(&self) -> u16 {
        self.state
    }
}

/// CRC over every bit of `bits`.
pub fn crc16(bits: &Bitstream) -> u16 {
    crc16_range(bits, 0, bits.len())
}

/// CRC over `count` bits of `bits` starting at `offset`.
///
/// Panics when the range exceeds the stream.
pub fn crc16_range(bits: &Bitstream, offset: usize, count: usize) -> u16 {
    assert!(offset + count <= bits.len(), "crc range out of bounds");
    let mut crc = Crc16::new();
    let mut pos = offset;
    let end = offset + count;
    while pos + 8 <= end {
        crc.update_byte(bits.byte_at_unchecked(pos));
        pos += 8;
    }
    while pos < end {
        crc.update_bit(bits.bit(pos));
        pos += 1;
    }
    crc.value()
}

/// CRC over whole octets.
pub fn crc16_bytes(bytes: &[u8]) -> u16 {
    let mut crc = Crc16::new();
    crc.update_bytes(bytes);
    crc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-serial shift register, one input bit per step, straight from the
    /// generator polynomial x^16 + x^12 + x^5 + 1.
    fn oracle(bits: &[bool]) -> u16 {
        let mut reg: u32 = 0xFFFF;
        for &b in bits {
            let top = (reg >> 15) & 1 == 1;
            reg = (reg << 1) & 0xFFFF;
            if top != b {
                reg ^= (1 << 12) | (1 << 5) | 1;
            }
        }
        reg as u16
    }

    fn unpack(bytes: &[u8]) -> Vec<bool> {
        bytes
            .iter()
            .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
            .collect()
    }

    #[test]
    fn empty_input_is_initial_value() {
        assert_eq!(crc16(&Bitstream::new()), 0xFFFF);
        assert_eq!(oracle(&[]), 0xFFFF);
    }

    #[test]
    fn standard_check_string() {
        assert_eq!(oracle(&unpack(b"123456789")), 0x29B1);
        assert_eq!(crc16_bytes(b"123456789"), 0x29B1);
        assert_eq!(crc16(&Bitstream::from_bytes(b"123456789")), 0x29B1);
    }

    #[test]
    fn single_zero_octet() {
        // Frozen from the oracle, which reproduces the check string above.
        assert_eq!(oracle(&unpack(&[0x00])), 0xE1F0);
        assert_eq!(crc16(&Bitstream::from_bytes(&[0x00])), 0xE1F0);
    }

    #[test]
    fn incremental_bits_match_table() {
        let mut a = Crc16::new();
        a.update_bits(0xCD11, 16);
        let mut b = Crc16::new();
        b.update_bytes(&[0xCD, 0x11]);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn matches_oracle_on_unaligned_input(bits in proptest::collection::vec(any::<bool>(), 0..400)) {
            let stream: Bitstream = bits.iter().copied().collect();
            prop_assert_eq!(crc16(&stream), oracle(&bits));
        }

        #[test]
        fn range_matches_oracle(bytes in proptest::collection::vec(any::<u8>(), 1..64), start in 0usize..8, trim in 0usize..8) {
            let stream = Bitstream::from_bytes(&bytes);
            let count = stream.len().saturating_sub(start + trim);
            let bits = unpack(&bytes);
            prop_assert_eq!(crc16_range(&stream, start, count), oracle(&bits[start..start + count]));
        }
    }
}
