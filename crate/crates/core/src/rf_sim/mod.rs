//! Deterministic discrete-event model of the 2.4 GHz medium.
//!
//! Keyboards ("typists") transmit scripted keystrokes to their paired dongle.
//! Sniffers can be attached on any channel; in raw mode they receive each
//! transmission as an [`AirCapture`] wrapped in noise at a random bit
//! alignment. Frames can be injected onto the medium and are judged by the
//! dongle exactly like genuine ones.
//!
//! All randomness comes from one ChaCha generator seeded from
//! [`SimConfig::seed`], and events at equal times fire in scheduling order,
//! so a run is a pure function of its configuration and operation sequence.

pub mod scenario;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::channel::{Channel, InvalidChannel};
use crate::esb::{self, parse_frame_at, Bitstream, EsbFrame, FrameError, MacAddress, ADDRESS_LEN, PREAMBLE_BITS};
use crate::ms_protocol::{self, keyseq, Keystroke, MsError};
use crate::promiscuous::{embed_bits, sniffer_config, AirCapture, SnifferConfig};
use crate::Micros;

/// Delay between a keystroke frame and the idle frame that follows it.
pub const IDLE_AFTER_KEY_US: Micros = 10_000;

/// Sequence numbers ahead of the last accepted one by at most this much are fresh.
pub const SEQUENCE_WINDOW: u16 = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("cannot move time back from {now} to {requested}")]
    TimeTravel { now: Micros, requested: Micros },
    #[error(transparent)]
    InvalidChannel(#[from] InvalidChannel),
    #[error("unknown sniffer {0}")]
    UnknownSniffer(usize),
    #[error("typist {mac}: {reason}")]
    InvalidTypist { mac: MacAddress, reason: String },
    #[error("loss probability {0} outside 0..=1")]
    InvalidLoss(f64),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Encode(#[from] MsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitOffsetMode {
    Fixed(u8),
    Random,
}

impl fmt::Display for BitOffsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BitOffsetMode::Fixed(k) => write!(f, "{k}"),
            BitOffsetMode::Random => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub loss_probability: f64,
    /// Random octets placed before and after the frame in each raw window.
    pub noise_bytes_per_window: usize,
    pub bit_offset_mode: BitOffsetMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            loss_probability: 0.0,
            noise_bytes_per_window: 0,
            bit_offset_mode: BitOffsetMode::Fixed(0),
        }
    }
}

/// A keyboard that types `text`, one key every `inter_key_delay`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypistScript {
    pub text: String,
    pub inter_key_delay: Micros,
    pub start_time: Micros,
    pub mac: MacAddress,
    pub channel: Channel,
    /// When set, the keyboard sends an idle packet at this period from time 0
    /// until `start_time`, as a powered-on keyboard does before anyone types.
    pub keepalive: Option<Micros>,
}

/// The receiver paired with a keyboard: what the victim computer sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DongleState {
    pub mac: MacAddress,
    pub channel: Channel,
    pub last_sequence: u16,
    pub typed_output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    BadCrc,
    WrongAddress,
    StaleSequence,
    Undecodable,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::BadCrc => "bad-crc",
            RejectReason::WrongAddress => "wrong-address",
            RejectReason::StaleSequence => "stale-sequence",
            RejectReason::Undecodable => "undecodable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accepted => f.write_str("accepted"),
            Verdict::Rejected(r) => write!(f, "rejected:{r}"),
        }
    }
}

/// How a sniffer's radio is programmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadioMode {
    /// Raw windows: preambles, misalignment and noise included.
    Raw(SnifferConfig),
    /// Ordinary receive mode: only CRC-valid frames addressed to this address.
    Addressed(MacAddress),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SnifferId(usize);

impl SnifferId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Typist(usize),
    Injected { id: u64 },
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Typist(i) => write!(f, "typist{i}"),
            Origin::Injected { id } => write!(f, "inject{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Receiver {
    Dongle(usize),
    Sniffer(SnifferId),
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Receiver::Dongle(i) => write!(f, "dongle{i}"),
            Receiver::Sniffer(s) => write!(f, "sniffer{}", s.0),
        }
    }
}

/// One entry of the simulation trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SimEvent {
    Transmitted { t: Micros, channel: Channel, origin: Origin, raw: Vec<u8>, bits: usize },
    Lost { t: Micros, receiver: Receiver },
    Dongle { t: Micros, dongle: usize, verdict: Verdict, sequence: Option<u16> },
    Captured { t: Micros, sniffer: SnifferId, channel: Channel, raw: Vec<u8> },
    Retuned { t: Micros, sniffer: SnifferId, channel: Channel },
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimEvent::Transmitted { t, channel, origin, raw, bits } => {
                write!(f, "{t} tx ch={channel} from={origin} bits={bits} raw={}", esb::hexdump::to_upper_hex(raw))
            }
            SimEvent::Lost { t, receiver } => write!(f, "{t} lost at={receiver}"),
            SimEvent::Dongle { t, dongle, verdict, sequence } => {
                write!(f, "{t} dongle{dongle} {verdict}")?;
                match sequence {
                    Some(s) => write!(f, " seq={s}"),
                    None => Ok(()),
                }
            }
            SimEvent::Captured { t, sniffer, channel, raw } => {
                write!(f, "{t} capture sniffer{} ch={channel} raw={}", sniffer.0, esb::hexdump::to_upper_hex(raw))
            }
            SimEvent::Retuned { t, sniffer, channel } => write!(f, "{t} retune sniffer{} ch={channel}", sniffer.0),
        }
    }
}

#[derive(Debug, Clone)]
enum Action {
    TypistKey { typist: usize, index: usize },
    TypistIdle { typist: usize },
    Transmit { bits: Bitstream, channel: Channel, origin: Origin, exclude: Option<SnifferId> },
}

#[derive(Debug, Clone)]
struct Scheduled {
    at: Micros,
    order: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

#[derive(Debug, Clone)]
struct Typist {
    script: TypistScript,
    keys: Vec<keyseq::KeyPress>,
    next_sequence: u16,
}

#[derive(Debug, Clone)]
struct Sniffer {
    channel: Channel,
    mode: RadioMode,
    inbox: VecDeque<AirCapture>,
}

/// The simulated medium and everything attached to it.
#[derive(Debug, Clone)]
pub struct Sim {
    config: SimConfig,
    now: Micros,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_order: u64,
    next_injection: u64,
    typists: Vec<Typist>,
    dongles: Vec<DongleState>,
    sniffers: Vec<Sniffer>,
    trace: Vec<SimEvent>,
    last_injection: Option<(u64, Verdict)>,
}

impl Sim {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&config.loss_probability) {
            return Err(SimError::InvalidLoss(config.loss_probability));
        }
        Ok(Sim {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            now: 0,
            queue: BinaryHeap::new(),
            next_order: 0,
            next_injection: 0,
            typists: Vec::new(),
            dongles: Vec::new(),
            sniffers: Vec::new(),
            trace: Vec::new(),
            last_injection: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Adds a keyboard and its dongle and schedules every frame it will send.
    pub fn add_typist(&mut self, script: TypistScript) -> Result<usize, SimError> {
        let invalid = |reason: &str| SimError::InvalidTypist {
            mac: script.mac,
            reason: reason.to_string(),
        };
        if script.mac.bytes()[0] != ms_protocol::MS_ADDRESS_PREFIX {
            return Err(invalid("address must start with 0xCD"));
        }
        if script.inter_key_delay == 0 {
            return Err(invalid("inter-key delay must be positive"));
        }
        if script.keepalive == Some(0) {
            return Err(invalid("keepalive period must be positive"));
        }
        if script.start_time < self.now {
            return Err(invalid("start time is in the past"));
        }
        let keys = keyseq::parse(&keyseq::escape_text(&script.text)).map_err(|e| invalid(&e.to_string()))?;

        if !self.dongles.iter().any(|d| d.mac == script.mac && d.channel == script.channel) {
            self.dongles.push(DongleState {
                mac: script.mac,
                channel: script.channel,
                last_sequence: 0,
                typed_output: String::new(),
            });
        }
        let typist = self.typists.len();
        if let Some(period) = script.keepalive {
            let mut t = self.now.div_ceil(period) * period;
            while t < script.start_time {
                self.schedule(t, Action::TypistIdle { typist });
                t += period;
            }
        }
        for index in 0..keys.len() {
            let at = script.start_time + index as Micros * script.inter_key_delay;
            self.schedule(at, Action::TypistKey { typist, index });
            self.schedule(at + IDLE_AFTER_KEY_US, Action::TypistIdle { typist });
        }
        self.typists.push(Typist {
            script,
            keys,
            next_sequence: 1,
        });
        Ok(typist)
    }

    /// Attaches a sniffer programmed with the raw-capture configuration.
    pub fn attach_sniffer(&mut self, channel: u8) -> Result<SnifferId, SimError> {
        self.attach_radio(channel, RadioMode::Raw(sniffer_config()))
    }

    pub fn attach_radio(&mut self, channel: u8, mode: RadioMode) -> Result<SnifferId, SimError> {
        let channel = Channel::new(channel)?;
        self.sniffers.push(Sniffer {
            channel,
            mode,
            inbox: VecDeque::new(),
        });
        Ok(SnifferId(self.sniffers.len() - 1))
    }

    /// Moves a sniffer to another channel. Takes effect immediately.
    pub fn retune(&mut self, sniffer: SnifferId, channel: u8) -> Result<(), SimError> {
        let channel = Channel::new(channel)?;
        let s = self.sniffer_mut(sniffer)?;
        if s.channel != channel {
            s.channel = channel;
            let t = self.now;
            self.trace.push(SimEvent::Retuned { t, sniffer, channel });
        }
        Ok(())
    }

    pub fn sniffer_channel(&self, sniffer: SnifferId) -> Result<Channel, SimError> {
        self.sniffers
            .get(sniffer.0)
            .map(|s| s.channel)
            .ok_or(SimError::UnknownSniffer(sniffer.0))
    }

    /// Takes every capture delivered to `sniffer` so far, oldest first.
    pub fn drain_captures(&mut self, sniffer: SnifferId) -> Result<Vec<AirCapture>, SimError> {
        Ok(self.sniffer_mut(sniffer)?.inbox.drain(..).collect())
    }

    pub fn dongles(&self) -> &[DongleState] {
        &self.dongles
    }

    pub fn dongle(&self, mac: &MacAddress) -> Option<&DongleState> {
        self.dongles.iter().find(|d| &d.mac == mac)
    }

    pub fn typists(&self) -> impl Iterator<Item = &TypistScript> {
        self.typists.iter().map(|t| &t.script)
    }

    /// Time of the last scheduled event, if any remain.
    pub fn last_scheduled(&self) -> Option<Micros> {
        self.queue.iter().map(|Reverse(s)| s.at).max()
    }

    pub fn trace(&self) -> &[SimEvent] {
        &self.trace
    }

    /// The trace as text, one event per line.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    /// Fires every event scheduled at or before `until` and moves the clock there.
    pub fn advance(&mut self, until: Micros) -> Result<Vec<SimEvent>, SimError> {
        if until < self.now {
            return Err(SimError::TimeTravel {
                now: self.now,
                requested: until,
            });
        }
        let mark = self.trace.len();
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.at > until {
                break;
            }
            let Reverse(event) = self.queue.pop().expect("peeked");
            self.now = event.at;
            self.fire(event.action);
        }
        self.now = until;
        Ok(self.trace[mark..].to_vec())
    }

    /// Puts `frame` on air at time `t` and reports the dongle's verdict.
    ///
    /// The clock advances to `t`. Injected frames are not subject to loss.
    pub fn inject(&mut self, frame: &EsbFrame, channel: u8, t: Micros) -> Result<Verdict, SimError> {
        self.inject_bits(&esb::serialize_frame(frame)?, channel, t, None)
    }

    /// Like [`Sim::inject`] from the radio of `sniffer`, which does not hear
    /// its own transmission.
    pub fn inject_from(&mut self, sniffer: SnifferId, frame: &EsbFrame, channel: u8, t: Micros) -> Result<Verdict, SimError> {
        self.sniffer_mut(sniffer)?;
        self.inject_bits(&esb::serialize_frame(frame)?, channel, t, Some(sniffer))
    }

    /// Injects an arbitrary on-air bit sequence (preamble included).
    pub fn inject_bits(
        &mut self,
        bits: &Bitstream,
        channel: u8,
        t: Micros,
        exclude: Option<SnifferId>,
    ) -> Result<Verdict, SimError> {
        let channel = Channel::new(channel)?;
        if t < self.now {
            return Err(SimError::TimeTravel { now: self.now, requested: t });
        }
        let id = self.next_injection;
        self.next_injection += 1;
        self.schedule(
            t,
            Action::Transmit {
                bits: bits.clone(),
                channel,
                origin: Origin::Injected { id },
                exclude,
            },
        );
        self.advance(t)?;
        match self.last_injection {
            Some((last, verdict)) if last == id => Ok(verdict),
            _ => unreachable!("injection {id} fired during advance"),
        }
    }

    fn sniffer_mut(&mut self, id: SnifferId) -> Result<&mut Sniffer, SimError> {
        self.sniffers.get_mut(id.0).ok_or(SimError::UnknownSniffer(id.0))
    }

    fn schedule(&mut self, at: Micros, action: Action) {
        let order = self.next_order;
        self.next_order += 1;
        self.queue.push(Reverse(Scheduled { at, order, action }));
    }

    fn fire(&mut self, action: Action) {
        match action {
            Action::TypistKey { typist, index } => {
                let press = self.typists[typist].keys[index];
                let ty = &self.typists[typist].script;
                let key = Keystroke::press(press.hid_code, press.modifiers, ty.mac, ty.channel, self.now);
                self.typist_send(typist, &key);
            }
            Action::TypistIdle { typist } => {
                let ty = &self.typists[typist].script;
                let key = Keystroke::idle(ty.mac, ty.channel, self.now);
                self.typist_send(typist, &key);
            }
            Action::Transmit {
                bits,
                channel,
                origin,
                exclude,
            } => self.transmit(&bits, channel, origin, exclude),
        }
    }

    fn typist_send(&mut self, typist: usize, key: &Keystroke) {
        let ty = &mut self.typists[typist];
        let sequence = ty.next_sequence;
        ty.next_sequence = ty.next_sequence.wrapping_add(1);
        let (mac, channel) = (ty.script.mac, ty.script.channel);
        let frame = ms_protocol::encode_keystroke(key, mac, sequence).expect("typist keys validated at add time");
        let bits = esb::serialize_frame(&frame).expect("encoded frames are valid");
        self.transmit(&bits, channel, Origin::Typist(typist), None);
    }

    fn lost(&mut self, receiver: Receiver) -> bool {
        let draw: f64 = self.rng.random();
        let lost = draw < self.config.loss_probability;
        if lost {
            self.trace.push(SimEvent::Lost { t: self.now, receiver });
        }
        lost
    }

    fn transmit(&mut self, bits: &Bitstream, channel: Channel, origin: Origin, exclude: Option<SnifferId>) {
        let t = self.now;
        self.trace.push(SimEvent::Transmitted {
            t,
            channel,
            origin,
            raw: bits.as_bytes().to_vec(),
            bits: bits.len(),
        });
        let injected = matches!(origin, Origin::Injected { .. });

        let mut verdict = Verdict::Rejected(RejectReason::WrongAddress);
        for d in 0..self.dongles.len() {
            if self.dongles[d].channel != channel {
                continue;
            }
            if !injected && self.lost(Receiver::Dongle(d)) {
                continue;
            }
            let (v, sequence) = receive_at_dongle(&mut self.dongles[d], bits);
            if v != Verdict::Rejected(RejectReason::WrongAddress) {
                self.trace.push(SimEvent::Dongle {
                    t,
                    dongle: d,
                    verdict: v,
                    sequence,
                });
                verdict = v;
            }
        }
        if let Origin::Injected { id } = origin {
            self.last_injection = Some((id, verdict));
        }

        for s in 0..self.sniffers.len() {
            let id = SnifferId(s);
            if self.sniffers[s].channel != channel || exclude == Some(id) {
                continue;
            }
            if self.lost(Receiver::Sniffer(id)) {
                continue;
            }
            let raw = match self.sniffers[s].mode {
                RadioMode::Raw(cfg) if cfg.delivers_raw_windows() => self.noisy_window(bits),
                RadioMode::Raw(_) => continue,
                RadioMode::Addressed(addr) => match parse_frame_at(bits, PREAMBLE_BITS) {
                    Some(f) if f.address == addr => bits.as_bytes().to_vec(),
                    _ => continue,
                },
            };
            self.trace.push(SimEvent::Captured {
                t,
                sniffer: id,
                channel,
                raw: raw.clone(),
            });
            self.sniffers[s].inbox.push_back(AirCapture { raw, channel, t });
        }
    }

    fn noisy_window(&mut self, bits: &Bitstream) -> Vec<u8> {
        let n = self.config.noise_bytes_per_window;
        let lead: Vec<u8> = (0..n).map(|_| self.rng.random()).collect();
        let offset = match self.config.bit_offset_mode {
            BitOffsetMode::Fixed(k) => k % 8,
            BitOffsetMode::Random => self.rng.random_range(0..8),
        };
        // Alignment filler is noise too; a noise-free channel pads with zeros.
        let fill: u8 = if n > 0 { self.rng.random() } else { 0 };
        let trail: Vec<u8> = (0..n).map(|_| self.rng.random()).collect();
        embed_bits(bits, &lead, offset, fill, &trail)
    }
}

/// Dongle acceptance: address, CRC, decode, then the sequence window.
fn receive_at_dongle(dongle: &mut DongleState, bits: &Bitstream) -> (Verdict, Option<u16>) {
    let addressed = (0..ADDRESS_LEN).all(|i| bits.byte_at(PREAMBLE_BITS + 8 * i) == Some(dongle.mac.bytes()[i]));
    if !addressed {
        return (Verdict::Rejected(RejectReason::WrongAddress), None);
    }
    let Some(frame) = parse_frame_at(bits, PREAMBLE_BITS) else {
        return (Verdict::Rejected(RejectReason::BadCrc), None);
    };
    let Ok(packet) = ms_protocol::decode(&frame) else {
        return (Verdict::Rejected(RejectReason::Undecodable), None);
    };
    let ahead = packet.sequence.wrapping_sub(dongle.last_sequence);
    if ahead == 0 || ahead > SEQUENCE_WINDOW {
        return (Verdict::Rejected(RejectReason::StaleSequence), Some(packet.sequence));
    }
    dongle.last_sequence = packet.sequence;
    if packet.is_keystroke() {
        dongle.typed_output.push_str(&keyseq::render(keyseq::KeyPress {
            hid_code: packet.hid_code,
            modifiers: packet.modifiers,
        }));
    }
    (Verdict::Accepted, Some(packet.sequence))
}
