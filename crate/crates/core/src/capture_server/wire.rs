//! Line formats spoken between nodes and the server.
//!
//! Every message is one `|`-separated line starting with the version tag.
//! Hex fields are lowercase and fixed width, numbers are canonical decimal,
//! so `encode(decode(line)) == line` for every accepted line.
//!
//! ```text
//! record   v1|node_id|mac_hex|channel|t_us|ptype_hex|hid_hex|mods_hex
//! command  v1|command_id|mac_hex|text_base64
//! status   v1|node_id|running          v1|node_id|failed|reason
//! announce v1|node_id|location_base64|lat|lon
//! ack      accepted=N dedup=M
//!          rejected line=K reason=...
//! ```

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use thiserror::Error;

use super::CommandStatus;
use crate::esb::MacAddress;
use crate::ms_protocol::{hid_to_char, Modifiers, PacketType};
use crate::node_agent::{validate_node_id, CaptureRecord, Location, NodeIdentity};
use crate::{Channel, Micros};

pub const WIRE_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("unsupported version `{0}`")]
    Version(String),
    #[error("bad node id `{0}`")]
    NodeId(String),
    #[error("bad {field} `{value}`")]
    Field { field: &'static str, value: String },
    #[error("unknown packet type 0x{0:02x}")]
    PacketType(u8),
    #[error("bad status `{0}`")]
    Status(String),
}

fn bad(field: &'static str, value: &str) -> WireError {
    WireError::Field {
        field,
        value: value.to_string(),
    }
}

fn split_exact(line: &str, n: usize) -> Result<Vec<&str>, WireError> {
    let parts: Vec<&str> = line.split('|').collect();
    if parts.len() != n {
        return Err(WireError::FieldCount {
            expected: n,
            found: parts.len(),
        });
    }
    if parts[0] != WIRE_VERSION {
        return Err(WireError::Version(parts[0].to_string()));
    }
    Ok(parts)
}

fn hex_u8(field: &'static str, s: &str) -> Result<u8, WireError> {
    if s.len() != 2 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(bad(field, s));
    }
    u8::from_str_radix(s, 16).map_err(|_| bad(field, s))
}

fn decimal<T: FromStr + ToString>(field: &'static str, s: &str) -> Result<T, WireError> {
    let v: T = s.parse().map_err(|_| bad(field, s))?;
    if v.to_string() != s {
        return Err(bad(field, s));
    }
    Ok(v)
}

fn mac_field(s: &str) -> Result<MacAddress, WireError> {
    if s.len() != 10 {
        return Err(bad("mac", s));
    }
    let mut bytes = [0u8; 5];
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = hex_u8("mac", &s[2 * i..2 * i + 2])?;
    }
    Ok(MacAddress::new(bytes))
}

fn node_field(s: &str) -> Result<String, WireError> {
    validate_node_id(s).map_err(|_| WireError::NodeId(s.to_string()))?;
    Ok(s.to_string())
}

pub fn encode_record(r: &CaptureRecord) -> String {
    format!(
        "{WIRE_VERSION}|{}|{}|{}|{}|{:02x}|{:02x}|{:02x}",
        r.node_id,
        r.mac.to_lower_hex(),
        r.channel.number(),
        r.t,
        r.packet_type.code(),
        r.hid_code,
        r.modifiers.bits()
    )
}

pub fn decode_record(line: &str) -> Result<CaptureRecord, WireError> {
    let p = split_exact(line, 8)?;
    let node_id = node_field(p[1])?;
    let mac = mac_field(p[2])?;
    let channel = Channel::new(decimal("channel", p[3])?).map_err(|_| bad("channel", p[3]))?;
    let t: Micros = decimal("t_us", p[4])?;
    let code = hex_u8("ptype", p[5])?;
    let packet_type = PacketType::from_code(code).ok_or(WireError::PacketType(code))?;
    let hid_code = hex_u8("hid", p[6])?;
    let modifiers = Modifiers(hex_u8("mods", p[7])?);
    Ok(CaptureRecord::new(node_id, mac, channel, t, packet_type, hid_code, modifiers))
}

/// One record per line, each terminated by `\n`.
pub fn encode_batch(records: &[CaptureRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&encode_record(r));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    /// 1-based line number within the batch.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestAck {
    pub accepted: usize,
    pub dedup: usize,
    pub rejected: Vec<RejectedLine>,
}

impl fmt::Display for IngestAck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "accepted={} dedup={}", self.accepted, self.dedup)?;
        for r in &self.rejected {
            write!(f, "\nrejected line={} reason={}", r.line, one_line(&r.reason))?;
        }
        Ok(())
    }
}

impl FromStr for IngestAck {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines();
        let head = lines.next().unwrap_or("");
        let (a, d) = head.split_once(' ').ok_or_else(|| bad("ack", head))?;
        let mut ack = IngestAck {
            accepted: decimal("accepted", a.strip_prefix("accepted=").ok_or_else(|| bad("ack", a))?)?,
            dedup: decimal("dedup", d.strip_prefix("dedup=").ok_or_else(|| bad("ack", d))?)?,
            rejected: Vec::new(),
        };
        for l in lines.filter(|l| !l.is_empty()) {
            let rest = l.strip_prefix("rejected line=").ok_or_else(|| bad("ack", l))?;
            let (n, reason) = rest.split_once(" reason=").ok_or_else(|| bad("ack", l))?;
            ack.rejected.push(RejectedLine {
                line: decimal("line", n)?,
                reason: reason.to_string(),
            });
        }
        Ok(ack)
    }
}

/// A command handed to a node for transmission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingCommand {
    pub command_id: u64,
    pub mac: MacAddress,
    /// Key sequence notation, see [`crate::ms_protocol::keyseq`].
    pub text: String,
}

pub fn encode_command(c: &PendingCommand) -> String {
    format!(
        "{WIRE_VERSION}|{}|{}|{}",
        c.command_id,
        c.mac.to_lower_hex(),
        BASE64.encode(c.text.as_bytes())
    )
}

pub fn decode_command(line: &str) -> Result<PendingCommand, WireError> {
    let p = split_exact(line, 4)?;
    let bytes = BASE64.decode(p[3]).map_err(|_| bad("text", p[3]))?;
    Ok(PendingCommand {
        command_id: decimal("command_id", p[1])?,
        mac: mac_field(p[2])?,
        text: String::from_utf8(bytes).map_err(|_| bad("text", p[3]))?,
    })
}

/// Parses a newline-separated list of commands; blank lines are skipped.
pub fn decode_commands(body: &str) -> Result<Vec<PendingCommand>, WireError> {
    body.lines().filter(|l| !l.is_empty()).map(decode_command).collect()
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Body of a node's status report for a command.
pub fn encode_status(node_id: &str, status: &CommandStatus) -> String {
    match status {
        CommandStatus::Failed(reason) => format!("{WIRE_VERSION}|{node_id}|failed|{}", one_line(reason)),
        other => format!("{WIRE_VERSION}|{node_id}|{}", other.label()),
    }
}

pub fn decode_status(line: &str) -> Result<(String, CommandStatus), WireError> {
    let mut parts = line.splitn(4, '|');
    let version = parts.next().unwrap_or("");
    if version != WIRE_VERSION {
        return Err(WireError::Version(version.to_string()));
    }
    let node_id = node_field(parts.next().ok_or(WireError::FieldCount { expected: 3, found: 1 })?)?;
    let label = parts.next().ok_or(WireError::FieldCount { expected: 3, found: 2 })?;
    let status = match (label, parts.next()) {
        ("pending", None) => CommandStatus::Pending,
        ("running", None) => CommandStatus::Running,
        ("done", None) => CommandStatus::Done,
        ("failed", Some(reason)) => CommandStatus::Failed(reason.to_string()),
        _ => return Err(WireError::Status(line.to_string())),
    };
    Ok((node_id, status))
}

pub fn encode_announce(id: &NodeIdentity) -> String {
    let coord = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "{WIRE_VERSION}|{}|{}|{}|{}",
        id.node_id(),
        BASE64.encode(id.location().label.as_bytes()),
        coord(id.location().lat),
        coord(id.location().lon)
    )
}

pub fn decode_announce(line: &str) -> Result<NodeIdentity, WireError> {
    let p = split_exact(line, 5)?;
    let label = BASE64
        .decode(p[2])
        .ok()
        .and_then(|b| String::from_utf8(b).ok())
        .ok_or_else(|| bad("location", p[2]))?;
    let coord = |field: &'static str, s: &str| -> Result<Option<f64>, WireError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>().map(Some).map_err(|_| bad(field, s))
        }
    };
    let location = Location {
        label,
        lat: coord("lat", p[3])?,
        lon: coord("lon", p[4])?,
    };
    NodeIdentity::new(p[1], location).map_err(|_| WireError::NodeId(p[1].to_string()))
}

/// Convenience for checking the character a record implies.
pub fn record_char(packet_type: PacketType, hid_code: u8, modifiers: Modifiers) -> Option<char> {
    match packet_type {
        PacketType::Keystroke => hid_to_char(hid_code, modifiers),
        PacketType::Idle => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> CaptureRecord {
        CaptureRecord::new(
            "node-1".into(),
            "CD1122AA55".parse().unwrap(),
            Channel::new(25).unwrap(),
            16_000_123,
            PacketType::Keystroke,
            0x0B,
            Modifiers::LSHIFT,
        )
    }

    #[test]
    fn record_line_is_bit_exact() {
        let line = encode_record(&sample());
        assert_eq!(line, "v1|node-1|cd1122aa55|25|16000123|78|0b|02");
        let back = decode_record(&line).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.ch, Some('H'));
    }

    #[test]
    fn record_rejects_non_canonical_fields() {
        for line in [
            "v1|node-1|CD1122AA55|25|1|78|0b|02",
            "v1|node-1|cd1122aa55|025|1|78|0b|02",
            "v1|node-1|cd1122aa55|84|1|78|0b|02",
            "v1|node-1|cd1122aa55|25|+1|78|0b|02",
            "v1|node-1|cd1122aa55|25|1|77|0b|02",
            "v1|node-1|cd1122aa55|25|1|78|b|02",
            "v1|node 1|cd1122aa55|25|1|78|0b|02",
            "v2|node-1|cd1122aa55|25|1|78|0b|02",
            "v1|node-1|cd1122aa55|25|1|78|0b",
            "",
        ] {
            assert!(decode_record(line).is_err(), "{line}");
        }
    }

    #[test]
    fn ack_round_trip() {
        let ack = IngestAck {
            accepted: 5,
            dedup: 0,
            rejected: vec![RejectedLine {
                line: 3,
                reason: "bad hid `zz`".into(),
            }],
        };
        let text = ack.to_string();
        assert_eq!(text, "accepted=5 dedup=0\nrejected line=3 reason=bad hid `zz`");
        assert_eq!(text.parse::<IngestAck>().unwrap(), ack);
        assert_eq!("accepted=6 dedup=0".parse::<IngestAck>().unwrap().accepted, 6);
    }

    #[test]
    fn command_and_status_lines() {
        let c = PendingCommand {
            command_id: 7,
            mac: "CD1122AA55".parse().unwrap(),
            text: "ok{enter}".into(),
        };
        let line = encode_command(&c);
        assert_eq!(line, "v1|7|cd1122aa55|b2t7ZW50ZXJ9");
        assert_eq!(decode_command(&line).unwrap(), c);

        let failed = CommandStatus::Failed("stale-sequence|x".into());
        let s = encode_status("n1", &failed);
        assert_eq!(s, "v1|n1|failed|stale-sequence|x");
        assert_eq!(decode_status(&s).unwrap(), ("n1".to_string(), failed));
        assert_eq!(decode_status("v1|n1|done").unwrap().1, CommandStatus::Done);
        assert!(decode_status("v1|n1|done|extra").is_err());
        assert!(decode_status("v1|n1|exploded").is_err());
    }

    #[test]
    fn announce_round_trip() {
        let id = NodeIdentity::new(
            "desk-4",
            Location {
                label: "3rd floor | east".into(),
                lat: Some(48.85),
                lon: None,
            },
        )
        .unwrap();
        let line = encode_announce(&id);
        assert_eq!(decode_announce(&line).unwrap(), id);
    }

    fn arb_record() -> impl Strategy<Value = CaptureRecord> {
        (
            "[a-zA-Z0-9-]{1,32}",
            any::<[u8; 5]>(),
            0u8..=83,
            any::<u64>(),
            any::<bool>(),
            any::<u8>(),
            any::<u8>(),
        )
            .prop_map(|(node, mac, ch, t, key, hid, mods)| {
                let ptype = if key { PacketType::Keystroke } else { PacketType::Idle };
                CaptureRecord::new(node, MacAddress::new(mac), Channel::new(ch).unwrap(), t, ptype, hid, Modifiers(mods))
            })
    }

    proptest! {
        #[test]
        fn records_round_trip(r in arb_record()) {
            let line = encode_record(&r);
            prop_assert_eq!(decode_record(&line).unwrap(), r);
        }

        #[test]
        fn accepted_lines_are_canonical(line in "v1\\|[a-z0-9-]{1,4}\\|[0-9a-f]{10}\\|[0-9]{1,3}\\|[0-9]{1,5}\\|[37]8\\|[0-9a-f]{2}\\|[0-9a-f]{2}") {
            if let Ok(r) = decode_record(&line) {
                prop_assert_eq!(encode_record(&r), line);
            }
        }
    }
}
