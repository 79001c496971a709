use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crc::Crc16;
use super::Bitstream;

pub const PREAMBLE_BITS: usize = 8;
pub const ADDRESS_LEN: usize = 5;
pub const ADDRESS_BITS: usize = ADDRESS_LEN * 8;
pub const PCF_BITS: usize = 9;
pub const CRC_BITS: usize = 16;
pub const MAX_PAYLOAD_LEN: usize = 32;

/// Address + PCF + CRC: the shortest frame once the preamble is stripped.
pub const MIN_FRAME_BITS: usize = ADDRESS_BITS + PCF_BITS + CRC_BITS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload length {0} exceeds {MAX_PAYLOAD_LEN}")]
    PayloadTooLong(usize),
    #[error("pid {0} does not fit in 2 bits")]
    InvalidPid(u8),
    #[error("payload has {actual} octets but the PCF declares {declared}")]
    LengthMismatch { declared: u8, actual: usize },
    #[error("stored crc {stored:#06x} does not match computed {computed:#06x}")]
    CrcMismatch { stored: u16, computed: u16 },
    #[error("preamble {found:#04x} does not match the address (expected {expected:#04x})")]
    BadPreamble { found: u8, expected: u8 },
    #[error("frame declares {expected} bits but {actual} were given")]
    BitLength { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MacParseError {
    #[error("expected 10 hex digits, got {0:?}")]
    BadLength(String),
    #[error("invalid hex in {0:?}")]
    BadHex(String),
}

/// A 5-octet ESB pipe address, first transmitted octet first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MacAddress(pub [u8; ADDRESS_LEN]);

impl MacAddress {
    pub const fn new(bytes: [u8; ADDRESS_LEN]) -> Self {
        MacAddress(bytes)
    }

    pub fn bytes(&self) -> &[u8; ADDRESS_LEN] {
        &self.0
    }

    /// Lowercase hex without separators, as used by the node wire protocol.
    pub fn to_lower_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02X}")?;
        }
        Ok(())
    }
}

impl FromStr for MacAddress {
    type Err = MacParseError;

    /// Accepts `CD1122AA55`, `cd1122aa55` or `CD:11:22:AA:55`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits: String = s.chars().filter(|&c| c != ':').collect();
        if digits.len() != ADDRESS_LEN * 2 || !digits.is_ascii() {
            return Err(MacParseError::BadLength(s.to_string()));
        }
        if !digits.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(MacParseError::BadHex(s.to_string()));
        }
        let mut out = [0u8; ADDRESS_LEN];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&digits[2 * i..2 * i + 2], 16)
                .map_err(|_| MacParseError::BadHex(s.to_string()))?;
        }
        Ok(MacAddress(out))
    }
}

impl From<MacAddress> for String {
    fn from(m: MacAddress) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for MacAddress {
    type Error = MacParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// The 9-bit packet control field: 6-bit payload length, 2-bit PID, NO_ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PacketControlField {
    payload_len: u8,
    pid: u8,
    no_ack: bool,
}

impl PacketControlField {
    pub fn new(payload_len: u8, pid: u8, no_ack: bool) -> Result<Self, FrameError> {
        if payload_len as usize > MAX_PAYLOAD_LEN {
            return Err(FrameError::PayloadTooLong(payload_len as usize));
        }
        if pid > 3 {
            return Err(FrameError::InvalidPid(pid));
        }
        Ok(PacketControlField {
            payload_len,
            pid,
            no_ack,
        })
    }

    pub fn payload_len(&self) -> u8 {
        self.payload_len
    }

    pub fn pid(&self) -> u8 {
        self.pid
    }

    pub fn no_ack(&self) -> bool {
        self.no_ack
    }

    /// The field as transmitted, in the low 9 bits.
    pub fn to_bits(self) -> u16 {
        ((self.payload_len as u16) << 3) | ((self.pid as u16) << 1) | self.no_ack as u16
    }

    pub fn from_bits(bits: u16) -> Result<Self, FrameError> {
        PacketControlField::new(((bits >> 3) & 0x3F) as u8, ((bits >> 1) & 0x3) as u8, bits & 1 == 1)
    }
}

/// One Enhanced ShockBurst frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EsbFrame {
    pub address: MacAddress,
    pub pcf: PacketControlField,
    pub payload: Vec<u8>,
    pub crc: u16,
}

impl EsbFrame {
    /// Builds a frame with a matching PCF length and a freshly computed CRC.
    pub fn new(address: MacAddress, pid: u8, no_ack: bool, payload: Vec<u8>) -> Result<Self, FrameError> {
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(FrameError::PayloadTooLong(payload.len()));
        }
        let pcf = PacketControlField::new(payload.len() as u8, pid, no_ack)?;
        let crc = compute_crc(&address, pcf, &payload);
        Ok(EsbFrame {
            address,
            pcf,
            payload,
            crc,
        })
    }

    pub fn computed_crc(&self) -> u16 {
        compute_crc(&self.address, self.pcf, &self.payload)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.payload.len() != self.pcf.payload_len as usize {
            return Err(FrameError::LengthMismatch {
                declared: self.pcf.payload_len,
                actual: self.payload.len(),
            });
        }
        let computed = self.computed_crc();
        if computed != self.crc {
            return Err(FrameError::CrcMismatch {
                stored: self.crc,
                computed,
            });
        }
        Ok(())
    }

    /// On-air length without the preamble.
    pub fn bit_len(&self) -> usize {
        MIN_FRAME_BITS + 8 * self.payload.len()
    }

    /// Preamble octet the radio sends ahead of this address.
    pub fn preamble(&self) -> u8 {
        preamble_for(&self.address)
    }
}

/// 0xAA when the first address bit is 1, else 0x55, so the preamble always
/// alternates into the address.
pub fn preamble_for(address: &MacAddress) -> u8 {
    if address.0[0] & 0x80 != 0 {
        0xAA
    } else {
        0x55
    }
}

fn compute_crc(address: &MacAddress, pcf: PacketControlField, payload: &[u8]) -> u16 {
    let mut crc = Crc16::new();
    crc.update_bytes(&address.0);
    crc.update_bits(pcf.to_bits() as u64, PCF_BITS as u32);
    for &b in payload {
        crc.update_byte(b);
    }
    crc.value()
}

/// Preamble ∥ address ∥ PCF ∥ payload ∥ CRC, MSB first.
pub fn serialize_frame(frame: &EsbFrame) -> Result<Bitstream, FrameError> {
    frame.validate()?;
    let mut out = Bitstream::with_capacity(PREAMBLE_BITS + frame.bit_len());
    out.push_byte(frame.preamble());
    out.extend_from_bytes(&frame.address.0);
    out.push_bits(frame.pcf.to_bits() as u64, PCF_BITS as u32);
    out.extend_from_bytes(&frame.payload);
    out.push_bits(frame.crc as u64, CRC_BITS as u32);
    Ok(out)
}

/// Parses exactly one on-air frame, preamble included.
///
/// Stricter than [`parse_frame_at`]: the preamble must match the address and
/// the stream must end right after the CRC, so a corrupted length field is
/// caught even when the CRC happens to agree.
pub fn parse_frame(bits: &Bitstream) -> Result<EsbFrame, FrameError> {
    if bits.len() < PREAMBLE_BITS + MIN_FRAME_BITS {
        return Err(FrameError::BitLength {
            expected: PREAMBLE_BITS + MIN_FRAME_BITS,
            actual: bits.len(),
        });
    }
    let pcf = PacketControlField::from_bits(
        bits.read_bits(PREAMBLE_BITS + ADDRESS_BITS, PCF_BITS as u32).unwrap_or(0) as u16,
    )?;
    let expected = PREAMBLE_BITS + MIN_FRAME_BITS + 8 * pcf.payload_len() as usize;
    if bits.len() != expected {
        return Err(FrameError::BitLength {
            expected,
            actual: bits.len(),
        });
    }
    let mut address = [0u8; ADDRESS_LEN];
    for (i, b) in address.iter_mut().enumerate() {
        *b = bits.byte_at_unchecked(PREAMBLE_BITS + 8 * i);
    }
    let address = MacAddress(address);
    let found = bits.byte_at_unchecked(0);
    if found != preamble_for(&address) {
        return Err(FrameError::BadPreamble {
            found,
            expected: preamble_for(&address),
        });
    }
    let payload_start = PREAMBLE_BITS + ADDRESS_BITS + PCF_BITS;
    let frame = EsbFrame {
        address,
        pcf,
        payload: (0..pcf.payload_len() as usize)
            .map(|i| bits.byte_at_unchecked(payload_start + 8 * i))
            .collect(),
        crc: bits.read_bits(expected - CRC_BITS, CRC_BITS as u32).unwrap_or(0) as u16,
    };
    frame.validate()?;
    Ok(frame)
}

/// Parses a frame whose address starts at `bit_offset`.
///
/// Returns `None` when the stream ends before the declared payload and CRC,
/// when the PCF declares more than 32 octets, or when the CRC does not match.
/// During promiscuous scanning these are the common outcomes.
pub fn parse_frame_at(bits: &Bitstream, bit_offset: usize) -> Option<EsbFrame> {
    if bit_offset.checked_add(MIN_FRAME_BITS)? > bits.len() {
        return None;
    }
    let pcf_start = bit_offset + ADDRESS_BITS;
    let pcf_raw = bits.read_bits(pcf_start, PCF_BITS as u32)? as u16;
    let payload_len = (pcf_raw >> 3) as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return None;
    }
    let covered = ADDRESS_BITS + PCF_BITS + 8 * payload_len;
    if bit_offset + covered + CRC_BITS > bits.len() {
        return None;
    }

    // address ∥ pcf ∥ payload is 8·(6 + len) + 1 bits.
    let mut crc = Crc16::new();
    let whole = covered / 8;
    for i in 0..whole {
        crc.update_byte(bits.byte_at_unchecked(bit_offset + 8 * i));
    }
    crc.update_bit(bits.bit(bit_offset + covered - 1));
    let stored = bits.read_bits(bit_offset + covered, CRC_BITS as u32)? as u16;
    if crc.value() != stored {
        return None;
    }

    let mut address = [0u8; ADDRESS_LEN];
    for (i, b) in address.iter_mut().enumerate() {
        *b = bits.byte_at_unchecked(bit_offset + 8 * i);
    }
    let payload_start = pcf_start + PCF_BITS;
    let payload = (0..payload_len)
        .map(|i| bits.byte_at_unchecked(payload_start + 8 * i))
        .collect();
    Some(EsbFrame {
        address: MacAddress(address),
        pcf: PacketControlField::from_bits(pcf_raw).ok()?,
        payload,
        crc: stored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mac(s: &str) -> MacAddress {
        s.parse().unwrap()
    }

    #[test]
    fn strict_parse_rejects_every_single_flip() {
        let f = EsbFrame::new(mac("CD1122AA55"), 2, false, vec![0x0A, 0x78, 0, 1, 2]).unwrap();
        let bits = serialize_frame(&f).unwrap();
        assert_eq!(parse_frame(&bits), Ok(f));
        for i in 0..bits.len() {
            let mut b = bits.clone();
            b.flip(i);
            assert!(parse_frame(&b).is_err(), "flip at {i}");
        }
        let mut longer = bits.clone();
        longer.push_bit(false);
        assert!(matches!(parse_frame(&longer), Err(FrameError::BitLength { .. })));
    }

    #[test]
    fn preamble_follows_address_msb() {
        let f = EsbFrame::new(mac("CD00000000"), 0, false, vec![]).unwrap();
        let bits = serialize_frame(&f).unwrap();
        assert_eq!(bits.len(), 73);
        assert_eq!(bits.byte_at(0), Some(0xAA));

        let f = EsbFrame::new(mac("0F00000000"), 0, false, vec![]).unwrap();
        assert_eq!(serialize_frame(&f).unwrap().byte_at(0), Some(0x55));
    }

    #[test]
    fn pcf_layout_is_len_pid_noack() {
        let pcf = PacketControlField::new(16, 2, true).unwrap();
        assert_eq!(pcf.to_bits(), 0b010000_10_1);
        assert_eq!(PacketControlField::from_bits(pcf.to_bits()).unwrap(), pcf);
        assert!(PacketControlField::new(33, 0, false).is_err());
        assert!(PacketControlField::new(0, 4, false).is_err());
    }

    #[test]
    fn serialize_rejects_broken_invariants() {
        let mut f = EsbFrame::new(mac("CD11223344"), 1, false, vec![1, 2, 3]).unwrap();
        f.payload.push(4);
        assert!(matches!(serialize_frame(&f), Err(FrameError::LengthMismatch { .. })));

        let mut f = EsbFrame::new(mac("CD11223344"), 1, false, vec![1, 2, 3]).unwrap();
        f.crc ^= 1;
        assert!(matches!(serialize_frame(&f), Err(FrameError::CrcMismatch { .. })));

        assert_eq!(
            EsbFrame::new(mac("CD11223344"), 0, false, vec![0; 33]),
            Err(FrameError::PayloadTooLong(33))
        );
    }

    #[test]
    fn all_zero_stream_is_rejected_by_crc() {
        // 40 address bits + 9 PCF bits, all zero; the bitwise register gives
        // 0x1C20, so the all-zero CRC field cannot match.
        let mut reg = Crc16::new();
        for _ in 0..49 {
            reg.update_bit(false);
        }
        assert_eq!(reg.value(), 0x1C20);
        let zeros = Bitstream::from_bit_values(&[0; 100]);
        assert_eq!(parse_frame_at(&zeros, 0), None);
    }

    #[test]
    fn short_stream_is_no_frame() {
        let f = EsbFrame::new(mac("CD11223344"), 0, false, vec![0xAB; 4]).unwrap();
        let bits = serialize_frame(&f).unwrap();
        let cut = bits.slice(0, bits.len() - 1).unwrap();
        assert_eq!(parse_frame_at(&cut, 8), None);
        assert_eq!(parse_frame_at(&bits, bits.len()), None);
    }

    #[test]
    fn crc_field_matches_crc_over_header_and_payload() {
        let f = EsbFrame::new(mac("CD1122AA55"), 2, false, vec![0x0A, 0x78, 0x01]).unwrap();
        let bits = serialize_frame(&f).unwrap();
        let covered = bits.len() - PREAMBLE_BITS - CRC_BITS;
        assert_eq!(super::super::crc::crc16_range(&bits, PREAMBLE_BITS, covered), f.crc);
    }

    fn arb_frame() -> impl Strategy<Value = EsbFrame> {
        (any::<[u8; 5]>(), 0u8..4, any::<bool>(), proptest::collection::vec(any::<u8>(), 0..=32))
            .prop_map(|(a, pid, no_ack, payload)| EsbFrame::new(MacAddress(a), pid, no_ack, payload).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip(f in arb_frame()) {
            let bits = serialize_frame(&f).unwrap();
            prop_assert_eq!(bits.len(), 73 + 8 * f.payload.len());
            prop_assert_eq!(bits.byte_at(0) == Some(0xAA), f.address.0[0] & 0x80 != 0);
            prop_assert_eq!(parse_frame_at(&bits, 8), Some(f));
        }

        #[test]
        fn payload_bit_flip_is_rejected(f in arb_frame(), pick in any::<proptest::sample::Index>()) {
            // Flips outside the length field never change the parsed extent, so
            // the CRC's single-error guarantee applies without exception.
            let mut bits = serialize_frame(&f).unwrap();
            let len_field = (PREAMBLE_BITS + ADDRESS_BITS)..(PREAMBLE_BITS + ADDRESS_BITS + 6);
            let candidates: Vec<usize> = (PREAMBLE_BITS..bits.len()).filter(|i| !len_field.contains(i)).collect();
            let i = candidates[pick.index(candidates.len())];
            bits.flip(i);
            prop_assert_eq!(parse_frame_at(&bits, 8), None);
        }

        #[test]
        fn mac_text_round_trip(a in any::<[u8; 5]>()) {
            let m = MacAddress(a);
            prop_assert_eq!(m.to_string().parse::<MacAddress>().unwrap(), m);
            prop_assert_eq!(m.to_lower_hex().parse::<MacAddress>().unwrap(), m);
        }
    }
}
