use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest channel number of the 2.4 GHz band (carrier 2483 MHz).
pub const MAX_CHANNEL: u8 = 83;

/// Carrier of channel 0, in MHz.
pub const BASE_FREQUENCY_MHZ: u16 = 2400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("channel {0} is outside 0..={MAX_CHANNEL}")]
pub struct InvalidChannel(pub u32);

/// A 1 MHz radio channel; the carrier is `2400 + number` MHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Channel(u8);

impl Channel {
    pub fn new(number: u8) -> Result<Self, InvalidChannel> {
        if number > MAX_CHANNEL {
            return Err(InvalidChannel(number as u32));
        }
        Ok(Channel(number))
    }

    /// Channel whose carrier is `mhz`.
    pub fn from_carrier_mhz(mhz: u16) -> Result<Self, InvalidChannel> {
        match mhz.checked_sub(BASE_FREQUENCY_MHZ) {
            Some(n) if n <= MAX_CHANNEL as u16 => Ok(Channel(n as u8)),
            _ => Err(InvalidChannel(mhz as u32)),
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn carrier_mhz(self) -> u16 {
        BASE_FREQUENCY_MHZ + self.0 as u16
    }
}

impl TryFrom<u8> for Channel {
    type Error = InvalidChannel;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Channel::new(value)
    }
}

impl From<Channel> for u8 {
    fn from(c: Channel) -> u8 {
        c.0
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges() {
        assert_eq!(Channel::new(0).unwrap().carrier_mhz(), 2400);
        assert_eq!(Channel::new(83).unwrap().carrier_mhz(), 2483);
        assert_eq!(Channel::new(84), Err(InvalidChannel(84)));
        assert_eq!(Channel::from_carrier_mhz(2425).unwrap().number(), 25);
        assert!(Channel::from_carrier_mhz(2399).is_err());
        assert!(Channel::from_carrier_mhz(2484).is_err());
    }
}
