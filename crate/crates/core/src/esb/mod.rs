//! Enhanced ShockBurst frames as the nRF24L01 puts them on air.

mod bits;
pub mod crc;
mod frame;
pub mod hexdump;

pub use bits::Bitstream;
pub use crc::{crc16, crc16_bytes, crc16_range, Crc16};
pub use frame::{
    parse_frame, parse_frame_at, preamble_for, serialize_frame, EsbFrame, FrameError, MacAddress, MacParseError,
    PacketControlField, ADDRESS_BITS, ADDRESS_LEN, CRC_BITS, MAX_PAYLOAD_LEN, MIN_FRAME_BITS, PCF_BITS,
    PREAMBLE_BITS,
};
