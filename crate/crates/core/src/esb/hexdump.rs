//! One-line text form of a frame: `addr=CD1122AA55 pid=2 noack=0 payload=0A78...`.
//!
//! Uppercase hex, fields separated by single spaces. The CRC is not printed;
//! it is recomputed on parse. Recovered frames may carry a leading
//! `offset=N` field giving the bit position of the address in the capture.

use thiserror::Error;

use super::{EsbFrame, FrameError, MacAddress};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexdumpError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("malformed token `{0}`")]
    Malformed(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

pub fn format_frame(frame: &EsbFrame) -> String {
    format!(
        "addr={} pid={} noack={} payload={}",
        frame.address,
        frame.pcf.pid(),
        frame.pcf.no_ack() as u8,
        to_upper_hex(&frame.payload)
    )
}

pub fn format_recovered(bit_position: usize, frame: &EsbFrame) -> String {
    format!("offset={bit_position} {}", format_frame(frame))
}

/// Parses a frame line, returning the optional `offset=` value alongside the frame.
pub fn parse_frame_line(line: &str) -> Result<(Option<usize>, EsbFrame), HexdumpError> {
    let mut offset = None;
    let mut addr = None;
    let mut pid = None;
    let mut noack = None;
    let mut payload = None;
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| HexdumpError::Malformed(token.to_string()))?;
        let bad = || HexdumpError::Malformed(token.to_string());
        match key {
            "offset" => offset = Some(value.parse::<usize>().map_err(|_| bad())?),
            "addr" => addr = Some(value.parse::<MacAddress>().map_err(|_| bad())?),
            "pid" => pid = Some(value.parse::<u8>().map_err(|_| bad())?),
            "noack" => {
                noack = Some(match value {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                })
            }
            "payload" => payload = Some(from_hex(value).ok_or_else(bad)?),
            other => return Err(HexdumpError::UnknownField(other.to_string())),
        }
    }
    let frame = EsbFrame::new(
        addr.ok_or(HexdumpError::MissingField("addr"))?,
        pid.ok_or(HexdumpError::MissingField("pid"))?,
        noack.ok_or(HexdumpError::MissingField("noack"))?,
        payload.ok_or(HexdumpError::MissingField("payload"))?,
    )?;
    Ok((offset, frame))
}

pub fn to_upper_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect()
}

/// Decodes hex of either case; whitespace and `:` separators are ignored.
pub fn from_hex(s: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = s
        .bytes()
        .filter(|c| !c.is_ascii_whitespace() && *c != b':')
        .collect();
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    digits
        .chunks(2)
        .map(|pair| u8::from_str_radix(std::str::from_utf8(pair).ok()?, 16).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_line() {
        let f = EsbFrame::new("CD1122AA55".parse().unwrap(), 2, false, vec![0x0A, 0x78, 0x00]).unwrap();
        let line = format_frame(&f);
        assert_eq!(line, "addr=CD1122AA55 pid=2 noack=0 payload=0A7800");
        assert_eq!(parse_frame_line(&line).unwrap(), (None, f.clone()));
        assert_eq!(format_recovered(11, &f), format!("offset=11 {line}"));
        assert_eq!(parse_frame_line(&format_recovered(11, &f)).unwrap(), (Some(11), f));
    }

    #[test]
    fn empty_payload() {
        let (_, f) = parse_frame_line("addr=0F00000000 pid=0 noack=1 payload=").unwrap();
        assert!(f.payload.is_empty());
        assert!(f.pcf.no_ack());
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(
            parse_frame_line("pid=0 noack=0 payload="),
            Err(HexdumpError::MissingField("addr"))
        );
        assert!(matches!(
            parse_frame_line("addr=CD1122AA55 pid=9 noack=0 payload="),
            Err(HexdumpError::Frame(FrameError::InvalidPid(9)))
        ));
        assert!(matches!(parse_frame_line("addr=CD11 pid=0 noack=0 payload="), Err(HexdumpError::Malformed(_))));
        assert!(matches!(
            parse_frame_line("addr=CD1122AA55 pid=0 noack=0 payload=0A7"),
            Err(HexdumpError::Malformed(_))
        ));
        assert!(matches!(
            parse_frame_line("addr=CD1122AA55 pid=0 noack=0 payload= rssi=3"),
            Err(HexdumpError::UnknownField(_))
        ));
    }
}
