//! Pseudo-promiscuous frame recovery.
//!
//! An nRF24L01 only hands over frames whose address matches its own. Setting
//! the address width to the illegal value of two octets and programming the
//! preamble pattern as the address makes the radio sync on every preamble and
//! dump whatever follows, CRC unchecked. What comes out is a raw window with
//! the real frame at an unknown bit alignment, surrounded by noise. Frames are
//! recovered in software by trying every bit position and keeping the ones
//! whose CRC checks out.

use serde::{Deserialize, Serialize};

use crate::esb::{self, hexdump, parse_frame_at, Bitstream, EsbFrame, MAX_PAYLOAD_LEN, MIN_FRAME_BITS};
use crate::{Channel, Micros};

/// Default raw window length in octets. The longest frame is 41 octets.
pub const DEFAULT_WINDOW_OCTETS: usize = 64;

/// Windows shorter than this cannot hold even an empty frame.
pub const MIN_CAPTURE_OCTETS: usize = MIN_FRAME_BITS.div_ceil(8);

/// A raw sniffed byte window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AirCapture {
    pub raw: Vec<u8>,
    pub channel: Channel,
    /// Simulation time of the transmission, microseconds.
    pub t: Micros,
}

/// A CRC-valid frame found inside an [`AirCapture`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RecoveredFrame {
    pub frame: EsbFrame,
    /// Octet of the capture holding the first address bit.
    pub byte_position: usize,
    /// Bit within that octet, 0 (MSB) to 7.
    pub bit_offset: u8,
    pub channel: Channel,
    pub t: Micros,
}

impl RecoveredFrame {
    /// Absolute bit index of the first address bit.
    pub fn bit_position(&self) -> usize {
        self.byte_position * 8 + self.bit_offset as usize
    }

    /// Bit index one past the CRC.
    pub fn end_bit(&self) -> usize {
        self.bit_position() + self.frame.bit_len()
    }

    pub fn to_hexdump(&self) -> String {
        hexdump::format_recovered(self.bit_position(), &self.frame)
    }
}

/// Radio programming that turns an nRF24L01 into a raw airstream sniffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnifferConfig {
    /// Address width register value, in octets. The chip documents 3..=5.
    pub address_len: u8,
    /// Programmed RX address, first transmitted octet first.
    pub address: [u8; 2],
    pub crc_check: bool,
}

impl SnifferConfig {
    /// Whether a radio programmed this way syncs on preambles and delivers
    /// unfiltered windows: a two-octet address made of preamble bits, CRC off.
    pub fn delivers_raw_windows(&self) -> bool {
        let preamble_like = |b: u8| matches!(b, 0x00 | 0xAA | 0x55);
        self.address_len == 2 && !self.crc_check && self.address.iter().all(|&b| preamble_like(b))
    }
}

/// The configuration for raw capture: address width 2, address 0x00AA, CRC off.
pub fn sniffer_config() -> SnifferConfig {
    SnifferConfig {
        address_len: 2,
        address: [0x00, 0xAA],
        crc_check: false,
    }
}

/// Every CRC-valid frame in the capture, in order of start position.
///
/// Every start position is checked independently, so a candidate that noise
/// happens to validate cannot hide a real frame it overlaps.
pub fn recover_frames(capture: &AirCapture) -> Vec<RecoveredFrame> {
    let mut out = Vec::new();
    if capture.raw.len() < MIN_CAPTURE_OCTETS {
        return out;
    }
    let bits = Bitstream::from_bytes(&capture.raw);
    for pos in 0..=bits.len() - MIN_FRAME_BITS {
        if let Some(frame) = parse_frame_at(&bits, pos) {
            out.push(RecoveredFrame {
                frame,
                byte_position: pos / 8,
                bit_offset: (pos % 8) as u8,
                channel: capture.channel,
                t: capture.t,
            });
        }
    }
    out
}

/// Expected number of CRC-checked candidates in a window of uniform noise.
///
/// A start position reaches the CRC check only if its 6-bit length field is at
/// most 32 and the declared frame fits in the window, each length value having
/// probability 1/64.
pub fn expected_candidates(window_octets: usize) -> f64 {
    let total = window_octets * 8;
    if total < MIN_FRAME_BITS {
        return 0.0;
    }
    let mut sum = 0.0;
    for start in 0..=(total - MIN_FRAME_BITS) {
        let room = total - MIN_FRAME_BITS - start;
        let fitting = (room / 8).min(MAX_PAYLOAD_LEN) + 1;
        sum += fitting as f64 / 64.0;
    }
    sum
}

/// Analytic false-accept rate per noise window: each CRC-checked candidate
/// passes with probability 2⁻¹⁶.
pub fn false_accept_bound(window_octets: usize) -> f64 {
    expected_candidates(window_octets) / 65536.0
}

/// Builds a raw window containing `frame` as a sniffer in raw mode would
/// deliver it: `lead` octets, then `offset_bits` filler bits, the preamble and
/// frame, filler up to the next octet boundary, then `trail` octets.
pub fn embed_frame(
    frame: &EsbFrame,
    lead: &[u8],
    offset_bits: u8,
    fill: u8,
    trail: &[u8],
) -> Result<Vec<u8>, esb::FrameError> {
    Ok(embed_bits(&esb::serialize_frame(frame)?, lead, offset_bits, fill, trail))
}

/// [`embed_frame`] for an arbitrary on-air bit sequence. Filler bits are
/// taken MSB-first from `fill`.
pub fn embed_bits(on_air: &Bitstream, lead: &[u8], offset_bits: u8, fill: u8, trail: &[u8]) -> Vec<u8> {
    let offset_bits = offset_bits % 8;
    let mut bits = Bitstream::from_bytes(lead);
    bits.push_bits(fill as u64 >> (8 - offset_bits as u32), offset_bits as u32);
    bits.extend_from_bitstream(on_air);
    let pad = (8 - bits.len() % 8) % 8;
    bits.push_bits(fill as u64, pad as u32);
    bits.extend_from_bytes(trail);
    bits.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::MacAddress;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(payload: &[u8]) -> EsbFrame {
        EsbFrame::new(MacAddress([0xCD, 0x11, 0x22, 0x33, 0x44]), 1, false, payload.to_vec()).unwrap()
    }

    fn capture(raw: Vec<u8>) -> AirCapture {
        AirCapture {
            raw,
            channel: Channel::new(25).unwrap(),
            t: 0,
        }
    }

    #[test]
    fn three_noise_bits_then_frame() {
        let f = frame(&[0x0A, 0x78, 0x06, 0x01, 0x55]);
        let raw = embed_frame(&f, &[], 3, 0b101, &[]).unwrap();
        let got = recover_frames(&capture(raw));
        assert_eq!(got.len(), 1);
        // Preamble occupies bits 3..11, so the address starts in octet 1 at bit 3.
        assert_eq!(got[0].frame, f);
        assert_eq!(got[0].bit_offset, 3);
        assert_eq!(got[0].byte_position, 1);
    }

    #[test]
    fn back_to_back_frames_with_gap_byte() {
        let f1 = frame(&[0x0A, 0x78, 1, 2, 3, 4, 5, 6]);
        let f2 = frame(&[0x0A, 0x38, 9, 9]);
        let mut raw = embed_frame(&f1, &[], 0, 0, &[0x5A]).unwrap();
        raw.extend(embed_frame(&f2, &[], 0, 0, &[]).unwrap());
        let got: Vec<_> = recover_frames(&capture(raw)).into_iter().map(|r| r.frame).collect();
        assert_eq!(got, vec![f1, f2]);
    }

    #[test]
    fn short_or_empty_capture_yields_nothing() {
        assert!(recover_frames(&capture(vec![])).is_empty());
        assert!(recover_frames(&capture(vec![0xAA; 8])).is_empty());
    }

    #[test]
    fn config_is_two_octet_preamble_address_without_crc() {
        let c = sniffer_config();
        assert_eq!(c.address_len, 2);
        assert_eq!(c.address, [0x00, 0xAA]);
        assert!(!c.crc_check);
        assert!(c.delivers_raw_windows());
        assert!(!SnifferConfig { crc_check: true, ..c }.delivers_raw_windows());
        assert!(!SnifferConfig { address_len: 5, ..c }.delivers_raw_windows());
    }

    #[test]
    fn candidate_count_for_default_window() {
        // 448 start positions; 192 of them fit every length 0..=32, the rest
        // fit floor(room/8)+1 lengths. Sum = 6336 + 8·(1+…+32) = 10560.
        assert!((expected_candidates(64) - 10560.0 / 64.0).abs() < 1e-9);
        assert_eq!(expected_candidates(8), 0.0);
    }

    #[test]
    fn recovered_frame_overlays_capture_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let len = rng.random_range(0..=32);
            let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let f = EsbFrame::new(MacAddress(rng.random()), rng.random_range(0..4), false, payload).unwrap();
            let lead: Vec<u8> = (0..rng.random_range(0..6)).map(|_| rng.random()).collect();
            let trail: Vec<u8> = (0..rng.random_range(0..6)).map(|_| rng.random()).collect();
            let raw = embed_frame(&f, &lead, rng.random_range(0..8), rng.random(), &trail).unwrap();
            let bits = Bitstream::from_bytes(&raw);
            for r in recover_frames(&capture(raw.clone())) {
                let on_air = esb::serialize_frame(&r.frame).unwrap();
                let body = on_air.slice(8, on_air.len() - 8).unwrap();
                assert_eq!(bits.slice(r.bit_position(), body.len()).unwrap(), body);
            }
        }
    }

    fn arb_frame() -> impl Strategy<Value = EsbFrame> {
        (any::<[u8; 5]>(), 0u8..4, proptest::collection::vec(any::<u8>(), 0..=32))
            .prop_map(|(a, pid, payload)| EsbFrame::new(MacAddress(a), pid, false, payload).unwrap())
    }

    proptest! {
        #[test]
        fn embedded_frame_is_recovered(
            f in arb_frame(),
            lead in proptest::collection::vec(any::<u8>(), 0..8),
            trail in proptest::collection::vec(any::<u8>(), 0..8),
            offset in 0u8..8,
            fill in any::<u8>(),
        ) {
            let raw = embed_frame(&f, &lead, offset, fill, &trail).unwrap();
            let start = lead.len() * 8 + offset as usize + 8;
            let got = recover_frames(&capture(raw));
            prop_assert!(got.iter().any(|r| r.frame == f && r.bit_position() == start));
        }

        #[test]
        fn concatenation_is_union(
            f1 in arb_frame(),
            f2 in arb_frame(),
            gap1 in proptest::collection::vec(any::<u8>(), 0..4),
            gap2 in proptest::collection::vec(any::<u8>(), 0..4),
        ) {
            let a = embed_frame(&f1, &gap1, 0, 0, &[]).unwrap();
            let b = embed_frame(&f2, &gap2, 0, 0, &[]).unwrap();
            let mut joined = a.clone();
            joined.extend_from_slice(&b);

            let shift = a.len();
            let mut expected: Vec<(usize, EsbFrame)> = recover_frames(&capture(a))
                .into_iter()
                .map(|r| (r.bit_position(), r.frame))
                .collect();
            expected.extend(recover_frames(&capture(b)).into_iter().map(|r| (r.bit_position() + shift * 8, r.frame)));
            // Candidates straddling the boundary exist only in the joined capture.
            let got: Vec<(usize, EsbFrame)> = recover_frames(&capture(joined))
                .into_iter()
                .map(|r| (r.bit_position(), r.frame))
                .filter(|(p, fr)| !(*p < shift * 8 && p + fr.bit_len() > shift * 8))
                .collect();
            prop_assert_eq!(got, expected);
        }
    }
}
