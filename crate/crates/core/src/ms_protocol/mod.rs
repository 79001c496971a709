//! Microsoft wireless keyboard payloads.
//!
//! These keyboards send plaintext HID reports. The only obfuscation is an XOR
//! of the payload, from octet 4 on, with the 5-octet address. Keyboard
//! addresses start with 0xCD, and the HID code sits at payload octet 9, which
//! lines up with address octet 0, so a keystroke can be read knowing only
//! that first octet.
//!
//! Payload layout (16 octets, plaintext view):
//!
//! | octet | field                                  |
//! |-------|----------------------------------------|
//! | 0     | device type, 0x0A                      |
//! | 1     | packet type, 0x78 keystroke / 0x38 idle |
//! | 2–3   | model id                               |
//! | 4–5   | sequence, little endian                |
//! | 6     | reserved, 0                            |
//! | 7     | modifier bitfield                      |
//! | 8     | reserved, 0                            |
//! | 9     | HID usage code                         |
//! | 10–14 | reserved, 0                            |
//! | 15    | XOR of octets 0–14                     |

mod keymap;
pub mod keyseq;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use keymap::{Keymap, KeymapError};

use crate::esb::{EsbFrame, FrameError, MacAddress};
use crate::{Channel, Micros};

pub const MS_ADDRESS_PREFIX: u8 = 0xCD;
pub const DEVICE_TYPE_KEYBOARD: u8 = 0x0A;
pub const PAYLOAD_LEN: usize = 16;
/// Octets 0..4 travel in the clear.
pub const CLEAR_PREFIX_LEN: usize = 4;
pub const HID_OFFSET: usize = 9;
pub const DEFAULT_MODEL_ID: [u8; 2] = [0x06, 0x01];

const SEQUENCE_OFFSET: usize = 4;
const MODIFIERS_OFFSET: usize = 7;
const CHECKSUM_OFFSET: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketType {
    Keystroke,
    Idle,
}

impl PacketType {
    pub fn code(self) -> u8 {
        match self {
            PacketType::Keystroke => 0x78,
            PacketType::Idle => 0x38,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x78 => Some(PacketType::Keystroke),
            0x38 => Some(PacketType::Idle),
            _ => None,
        }
    }
}

/// HID modifier byte: bit 0 LCtrl, 1 LShift, 2 LAlt, 3 LGui, 4–7 the right-hand keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Modifiers(pub u8);

impl Modifiers {
    pub const NONE: Modifiers = Modifiers(0);
    pub const LCTRL: Modifiers = Modifiers(0x01);
    pub const LSHIFT: Modifiers = Modifiers(0x02);
    pub const LALT: Modifiers = Modifiers(0x04);
    pub const LGUI: Modifiers = Modifiers(0x08);
    pub const RCTRL: Modifiers = Modifiers(0x10);
    pub const RSHIFT: Modifiers = Modifiers(0x20);
    pub const RALT: Modifiers = Modifiers(0x40);
    pub const RGUI: Modifiers = Modifiers(0x80);

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, other: Modifiers) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn shift(self) -> bool {
        self.0 & (Self::LSHIFT.0 | Self::RSHIFT.0) != 0
    }

    /// Any modifier other than shift is held.
    pub fn has_command_modifier(self) -> bool {
        self.0 & !(Self::LSHIFT.0 | Self::RSHIFT.0) != 0
    }
}

impl std::ops::BitOr for Modifiers {
    type Output = Modifiers;

    fn bitor(self, rhs: Modifiers) -> Modifiers {
        Modifiers(self.0 | rhs.0)
    }
}

/// A de-whitened keyboard payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MsKbPacket {
    pub device_type: u8,
    pub packet_type: PacketType,
    pub model_id: [u8; 2],
    pub sequence: u16,
    pub modifiers: Modifiers,
    pub hid_code: u8,
}

impl MsKbPacket {
    pub fn is_keystroke(&self) -> bool {
        self.packet_type == PacketType::Keystroke
    }

    /// The 16-octet plaintext payload.
    pub fn to_plaintext(&self) -> [u8; PAYLOAD_LEN] {
        let mut p = [0u8; PAYLOAD_LEN];
        p[0] = self.device_type;
        p[1] = self.packet_type.code();
        p[2..4].copy_from_slice(&self.model_id);
        p[SEQUENCE_OFFSET..SEQUENCE_OFFSET + 2].copy_from_slice(&self.sequence.to_le_bytes());
        p[MODIFIERS_OFFSET] = self.modifiers.0;
        p[HID_OFFSET] = self.hid_code;
        p[CHECKSUM_OFFSET] = checksum(&p[..CHECKSUM_OFFSET]);
        p
    }
}

/// A decoded key event attributed to a keyboard, channel and time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Keystroke {
    pub ch: Option<char>,
    pub hid_code: u8,
    pub modifiers: Modifiers,
    /// Keystroke packet (true) or idle packet (false).
    pub pressed: bool,
    pub t: Micros,
    pub mac: MacAddress,
    pub channel: Channel,
}

impl Keystroke {
    /// A key press carrying `hid_code`, with `ch` derived from the US layout.
    pub fn press(hid_code: u8, modifiers: Modifiers, mac: MacAddress, channel: Channel, t: Micros) -> Self {
        Keystroke {
            ch: hid_to_char(hid_code, modifiers),
            hid_code,
            modifiers,
            pressed: true,
            t,
            mac,
            channel,
        }
    }

    /// The idle packet sent after a key is released.
    pub fn idle(mac: MacAddress, channel: Channel, t: Micros) -> Self {
        Keystroke {
            ch: None,
            hid_code: 0,
            modifiers: Modifiers::NONE,
            pressed: false,
            t,
            mac,
            channel,
        }
    }

    pub fn from_packet(packet: &MsKbPacket, mac: MacAddress, channel: Channel, t: Micros) -> Self {
        Keystroke {
            ch: if packet.is_keystroke() {
                hid_to_char(packet.hid_code, packet.modifiers)
            } else {
                None
            },
            hid_code: packet.hid_code,
            modifiers: packet.modifiers,
            pressed: packet.is_keystroke(),
            t,
            mac,
            channel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MsError {
    #[error("payload of {0} octets is shorter than the 4-octet clear prefix")]
    PayloadTooShort(usize),
    #[error("address {0} is not a Microsoft keyboard address")]
    NotMsAddress(MacAddress),
    #[error("a key press needs a non-zero HID code")]
    EmptyKeystroke,
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Why a frame did not decode as a Microsoft keyboard packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NotMs {
    #[error("address or type octets do not match a Microsoft keyboard")]
    NotDetected,
    #[error("payload is {0} octets, expected {PAYLOAD_LEN}")]
    BadLength(usize),
    #[error("payload checksum mismatch")]
    Checksum,
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

/// XOR octets 4.. with the address, cycling through its five octets.
///
/// Applying it twice gives back the input.
pub fn descramble(payload: &[u8], mac: &MacAddress) -> Result<Vec<u8>, MsError> {
    if payload.len() < CLEAR_PREFIX_LEN {
        return Err(MsError::PayloadTooShort(payload.len()));
    }
    let key = mac.bytes();
    Ok(payload
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if i < CLEAR_PREFIX_LEN {
                b
            } else {
                b ^ key[(i - CLEAR_PREFIX_LEN) % key.len()]
            }
        })
        .collect())
}

/// Address starts with 0xCD and the payload opens with 0x0A then 0x78 or 0x38.
///
/// Only the address and the clear prefix are inspected, so detection works
/// before de-whitening.
pub fn is_ms_keyboard(frame: &EsbFrame) -> bool {
    frame.address.bytes()[0] == MS_ADDRESS_PREFIX
        && frame.payload.len() >= 2
        && frame.payload[0] == DEVICE_TYPE_KEYBOARD
        && PacketType::from_code(frame.payload[1]).is_some()
}

pub fn decode(frame: &EsbFrame) -> Result<MsKbPacket, NotMs> {
    if !is_ms_keyboard(frame) {
        return Err(NotMs::NotDetected);
    }
    if frame.payload.len() != PAYLOAD_LEN {
        return Err(NotMs::BadLength(frame.payload.len()));
    }
    let p = descramble(&frame.payload, &frame.address).map_err(|_| NotMs::BadLength(frame.payload.len()))?;
    if checksum(&p[..CHECKSUM_OFFSET]) != p[CHECKSUM_OFFSET] {
        return Err(NotMs::Checksum);
    }
    Ok(MsKbPacket {
        device_type: p[0],
        packet_type: PacketType::from_code(p[1]).ok_or(NotMs::NotDetected)?,
        model_id: [p[2], p[3]],
        sequence: u16::from_le_bytes([p[SEQUENCE_OFFSET], p[SEQUENCE_OFFSET + 1]]),
        modifiers: Modifiers(p[MODIFIERS_OFFSET]),
        hid_code: p[HID_OFFSET],
    })
}

/// US-QWERTY glyph for a keyboard-page usage; shift picks the upper glyph.
pub fn hid_to_char(hid_code: u8, modifiers: Modifiers) -> Option<char> {
    Keymap::us_qwerty().to_char(hid_code, modifiers)
}

/// HID code and modifiers that type `c` on the US layout.
pub fn char_to_key(c: char) -> Option<(u8, Modifiers)> {
    let (hid, shift) = Keymap::us_qwerty().to_key(c)?;
    Some((hid, if shift { Modifiers::LSHIFT } else { Modifiers::NONE }))
}

/// Wraps a plaintext packet: whitening with `mac`, then an ESB frame with a
/// fresh CRC. The PID follows the low bits of the sequence.
pub fn encode_packet(packet: &MsKbPacket, mac: MacAddress) -> Result<EsbFrame, MsError> {
    if mac.bytes()[0] != MS_ADDRESS_PREFIX {
        return Err(MsError::NotMsAddress(mac));
    }
    let payload = descramble(&packet.to_plaintext(), &mac)?;
    Ok(EsbFrame::new(mac, (packet.sequence & 0x3) as u8, false, payload)?)
}

/// Builds the on-air frame for a key press (`pressed`) or idle packet.
pub fn encode_keystroke(key: &Keystroke, mac: MacAddress, sequence: u16) -> Result<EsbFrame, MsError> {
    if key.pressed && key.hid_code == 0 {
        return Err(MsError::EmptyKeystroke);
    }
    let packet = MsKbPacket {
        device_type: DEVICE_TYPE_KEYBOARD,
        packet_type: if key.pressed {
            PacketType::Keystroke
        } else {
            PacketType::Idle
        },
        model_id: DEFAULT_MODEL_ID,
        sequence,
        modifiers: if key.pressed { key.modifiers } else { Modifiers::NONE },
        hid_code: if key.pressed { key.hid_code } else { 0 },
    };
    encode_packet(&packet, mac)
}

impl fmt::Display for PacketType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PacketType::Keystroke => "keystroke",
            PacketType::Idle => "idle",
        })
    }
}
