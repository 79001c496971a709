//! Channel sweep and lock state machine.
//!
//! The scanner hops through the plan one channel per dwell period. Any frame
//! that passes the Microsoft keyboard checks registers its address; the first
//! such frame while sweeping locks the scanner onto that keyboard's channel,
//! and from then on its keystrokes are decoded and emitted. If the target goes
//! quiet for `lock_timeout`, sweeping resumes at the next planned channel.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::esb::MacAddress;
use crate::ms_protocol::{self, Keystroke};
use crate::promiscuous::{recover_frames, AirCapture};
use crate::{Channel, Micros};

pub const FIRST_SCAN_CHANNEL: u8 = 3;
pub const LAST_SCAN_CHANNEL: u8 = 80;
pub const DEFAULT_DWELL_US: Micros = 200_000;
pub const DEFAULT_LOCK_TIMEOUT_US: Micros = 5_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScanPlan {
    pub channels: Vec<Channel>,
    /// Time spent listening on each channel while sweeping.
    pub dwell: Micros,
}

impl ScanPlan {
    /// Time for one pass over every channel.
    pub fn sweep_time(&self) -> Micros {
        self.dwell * self.channels.len() as Micros
    }
}

/// Carriers 2403 through 2480 MHz, ascending, 200 ms each.
pub fn channel_plan() -> ScanPlan {
    ScanPlan {
        channels: (FIRST_SCAN_CHANNEL..=LAST_SCAN_CHANNEL)
            .map(|n| Channel::new(n).expect("plan channels are in band"))
            .collect(),
        dwell: DEFAULT_DWELL_US,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScanMode {
    Sweeping,
    Locked { mac: MacAddress, channel: Channel },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Discovery {
    pub channel: Channel,
    pub first_seen: Micros,
    pub last_seen: Micros,
    /// Sequence counter of the most recent frame heard from this keyboard.
    pub last_sequence: u16,
}

/// Counters for everything the scanner looked at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ScanDiagnostics {
    pub captures: u64,
    pub off_channel_captures: u64,
    pub frames: u64,
    pub foreign_frames: u64,
    pub undecodable_frames: u64,
    pub keystrokes: u64,
    pub idles: u64,
    pub hops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutput {
    /// Keyboards seen for the first time in this step.
    pub discoveries: Vec<(MacAddress, Channel)>,
    /// Decoded packets from the locked target, in capture-time order.
    pub keystrokes: Vec<Keystroke>,
    /// Channel the radio must move to, if the scanner hopped.
    pub retune: Option<Channel>,
}

#[derive(Debug, Clone)]
pub struct Scanner {
    plan: ScanPlan,
    lock_timeout: Micros,
    mode: ScanMode,
    plan_index: usize,
    current_channel: Channel,
    entered_at: Micros,
    last_target_traffic: Micros,
    discovered: BTreeMap<MacAddress, Discovery>,
    diagnostics: ScanDiagnostics,
}

impl Scanner {
    /// Starts sweeping at the first planned channel at time `now`.
    ///
    /// Panics on an empty plan.
    pub fn new(plan: ScanPlan, lock_timeout: Micros, now: Micros) -> Self {
        assert!(!plan.channels.is_empty(), "scan plan needs at least one channel");
        let current_channel = plan.channels[0];
        Scanner {
            plan,
            lock_timeout,
            mode: ScanMode::Sweeping,
            plan_index: 0,
            current_channel,
            entered_at: now,
            last_target_traffic: now,
            discovered: BTreeMap::new(),
            diagnostics: ScanDiagnostics::default(),
        }
    }

    pub fn with_defaults(now: Micros) -> Self {
        Scanner::new(channel_plan(), DEFAULT_LOCK_TIMEOUT_US, now)
    }

    pub fn mode(&self) -> ScanMode {
        self.mode
    }

    pub fn current_channel(&self) -> Channel {
        self.current_channel
    }

    pub fn plan(&self) -> &ScanPlan {
        &self.plan
    }

    pub fn discovered(&self) -> &BTreeMap<MacAddress, Discovery> {
        &self.discovered
    }

    pub fn diagnostics(&self) -> ScanDiagnostics {
        self.diagnostics
    }

    /// Feeds the captures taken on the current channel since the last step,
    /// then applies dwell and lock timeouts as of `now`.
    pub fn step(&mut self, captures: &[AirCapture], now: Micros) -> StepOutput {
        let mut out = StepOutput::default();
        let mut ordered: Vec<&AirCapture> = captures.iter().collect();
        ordered.sort_by_key(|c| c.t);

        for capture in ordered {
            self.diagnostics.captures += 1;
            if capture.channel != self.current_channel {
                self.diagnostics.off_channel_captures += 1;
                continue;
            }
            for recovered in recover_frames(capture) {
                self.diagnostics.frames += 1;
                let frame = &recovered.frame;
                if !ms_protocol::is_ms_keyboard(frame) {
                    self.diagnostics.foreign_frames += 1;
                    continue;
                }
                let packet = match ms_protocol::decode(frame) {
                    Ok(p) => p,
                    Err(_) => {
                        self.diagnostics.undecodable_frames += 1;
                        continue;
                    }
                };
                let mac = frame.address;
                let t = capture.t;
                let entry = self.discovered.entry(mac).or_insert_with(|| {
                    out.discoveries.push((mac, capture.channel));
                    Discovery {
                        channel: capture.channel,
                        first_seen: t,
                        last_seen: t,
                        last_sequence: packet.sequence,
                    }
                });
                entry.channel = capture.channel;
                entry.last_seen = t;
                entry.last_sequence = packet.sequence;

                if self.mode == ScanMode::Sweeping {
                    self.mode = ScanMode::Locked {
                        mac,
                        channel: capture.channel,
                    };
                }
                if let ScanMode::Locked { mac: target, .. } = self.mode {
                    if target == mac {
                        self.last_target_traffic = t;
                        if packet.is_keystroke() {
                            self.diagnostics.keystrokes += 1;
                        } else {
                            self.diagnostics.idles += 1;
                        }
                        out.keystrokes
                            .push(Keystroke::from_packet(&packet, mac, capture.channel, t));
                    }
                }
            }
        }

        match self.mode {
            ScanMode::Sweeping => {
                if now.saturating_sub(self.entered_at) >= self.plan.dwell {
                    self.plan_index = (self.plan_index + 1) % self.plan.channels.len();
                    out.retune = Some(self.hop_to(self.plan_index, now));
                }
            }
            ScanMode::Locked { channel, .. } => {
                if now.saturating_sub(self.last_target_traffic) >= self.lock_timeout {
                    self.mode = ScanMode::Sweeping;
                    let from = self
                        .plan
                        .channels
                        .iter()
                        .position(|&c| c == channel)
                        .unwrap_or(self.plan_index);
                    self.plan_index = (from + 1) % self.plan.channels.len();
                    out.retune = Some(self.hop_to(self.plan_index, now));
                } else if self.current_channel != channel {
                    self.current_channel = channel;
                    out.retune = Some(channel);
                }
            }
        }
        out
    }

    fn hop_to(&mut self, index: usize, now: Micros) -> Channel {
        self.current_channel = self.plan.channels[index];
        self.entered_at = now;
        self.diagnostics.hops += 1;
        self.current_channel
    }
}
