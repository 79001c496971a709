//! Runs a scenario in-process: the simulator, one agent per node, and a
//! capture store reached through [`LocalLink`], all on simulation time.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capture_server::{wire, CaptureStore, CommandStatus, IngestAck, InjectionCommand, PendingCommand, StoreError};
use crate::node_agent::{
    AgentError, AgentSettings, AgentStats, BadNodeId, CaptureRecord, LinkError, Location, NodeAgent, NodeIdentity,
    ServerLink,
};
use crate::rf_sim::scenario::{PlannedInjection, Scenario};
use crate::rf_sim::{DongleState, Sim, SimError};
use crate::scanner::Discovery;
use crate::{MacAddress, Micros};

pub const CYCLE_US: Micros = 10_000;
/// Simulated time kept running after the last scheduled activity.
pub const TAIL_US: Micros = 3_000_000;
/// Time allowed for a planned injection to be claimed and sent.
pub const INJECTION_GRACE_US: Micros = 5_000_000;
pub const DEFAULT_NODE_ID: &str = "node-1";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    NodeId(#[from] BadNodeId),
}

pub type SharedStore = Arc<Mutex<CaptureStore>>;

pub fn lock(store: &SharedStore) -> MutexGuard<'_, CaptureStore> {
    store.lock().unwrap_or_else(|e| e.into_inner())
}

/// Server time as seen by an in-process store.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn get(&self) -> Micros {
        self.0.load(Ordering::SeqCst)
    }

    pub fn set(&self, t: Micros) {
        self.0.store(t, Ordering::SeqCst)
    }
}

/// A link that calls the store directly, still going through the wire format.
#[derive(Clone)]
pub struct LocalLink {
    store: SharedStore,
    clock: SimClock,
}

impl LocalLink {
    pub fn new(store: SharedStore, clock: SimClock) -> Self {
        LocalLink { store, clock }
    }
}

impl ServerLink for LocalLink {
    fn announce(&mut self, identity: &NodeIdentity) -> Result<(), LinkError> {
        let id = wire::decode_announce(&wire::encode_announce(identity)).map_err(|e| LinkError::Refused(e.to_string()))?;
        lock(&self.store).announce(&id, self.clock.get());
        Ok(())
    }

    fn ingest(&mut self, batch: &[CaptureRecord]) -> Result<IngestAck, LinkError> {
        let ack = lock(&self.store)
            .ingest(&wire::encode_batch(batch), self.clock.get())
            .map_err(|e| LinkError::Unreachable(e.to_string()))?;
        ack.to_string().parse().map_err(|e: wire::WireError| LinkError::Refused(e.to_string()))
    }

    fn poll_commands(&mut self, node_id: &str) -> Result<Vec<PendingCommand>, LinkError> {
        let offered = lock(&self.store).poll_commands(node_id, self.clock.get());
        let body: Vec<String> = offered.iter().map(wire::encode_command).collect();
        wire::decode_commands(&body.join("\n")).map_err(|e| LinkError::Refused(e.to_string()))
    }

    fn update_status(&mut self, node_id: &str, command_id: u64, status: &CommandStatus) -> Result<(), LinkError> {
        let (node, status) =
            wire::decode_status(&wire::encode_status(node_id, status)).map_err(|e| LinkError::Refused(e.to_string()))?;
        lock(&self.store)
            .update_command(command_id, &node, status, self.clock.get())
            .map_err(|e| LinkError::Refused(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionOutcome {
    pub planned: PlannedInjection,
    pub enqueued: Result<u64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub node_id: String,
    pub stats: AgentStats,
    pub discovered: Vec<(MacAddress, Discovery)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub end_time: Micros,
    pub dongles: Vec<DongleState>,
    pub nodes: Vec<NodeSummary>,
    pub injections: Vec<InjectionOutcome>,
    pub commands: Vec<InjectionCommand>,
    pub server_log: String,
    /// SHA-256 of `server_log`, lowercase hex.
    pub log_digest: String,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "end_time_us {}", self.end_time)?;
        for d in &self.dongles {
            writeln!(f, "dongle {} ch={} output={:?}", d.mac, d.channel.number(), d.typed_output)?;
        }
        for n in &self.nodes {
            for (mac, d) in &n.discovered {
                writeln!(f, "node {} discovered {} ch={} at={}", n.node_id, mac, d.channel.number(), d.first_seen)?;
            }
            writeln!(
                f,
                "node {} keystrokes={} idles={} sent={} dropped={} injected_frames={}",
                n.node_id,
                n.stats.keystrokes_seen,
                n.stats.idles_seen,
                n.stats.records_sent,
                n.stats.records_dropped,
                n.stats.frames_injected
            )?;
        }
        for i in &self.injections {
            match &i.enqueued {
                Ok(id) => writeln!(f, "inject at={} mac={} command={}", i.planned.at, i.planned.mac, id)?,
                Err(e) => writeln!(f, "inject at={} mac={} rejected: {e}", i.planned.at, i.planned.mac)?,
            }
        }
        for c in &self.commands {
            writeln!(f, "command {} {} {:?} {}", c.command_id, c.mac, c.text, c.status)?;
        }
        writeln!(f, "server_log_lines {}", self.server_log.lines().count())?;
        write!(f, "server_log_sha256 {}", self.log_digest)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

fn identities(scenario: &Scenario) -> Result<Vec<NodeIdentity>, BadNodeId> {
    if scenario.nodes.is_empty() {
        return Ok(vec![NodeIdentity::new(DEFAULT_NODE_ID, Location::default())?]);
    }
    scenario
        .nodes
        .iter()
        .map(|n| {
            NodeIdentity::new(
                &n.id,
                Location {
                    label: n.location.clone(),
                    lat: n.lat,
                    lon: n.lon,
                },
            )
        })
        .collect()
}

pub struct Simulation<L> {
    sim: Sim,
    nodes: Vec<NodeAgent<L>>,
    store: Option<SharedStore>,
    clock: SimClock,
    planned: VecDeque<PlannedInjection>,
    injections: Vec<InjectionOutcome>,
    end: Micros,
}

impl Simulation<LocalLink> {
    /// Simulator, nodes and an in-memory store in one process.
    pub fn in_process(scenario: &Scenario) -> Result<Self, RunError> {
        let store: SharedStore = Arc::new(Mutex::new(CaptureStore::in_memory()));
        let clock = SimClock::default();
        let mut run = Simulation::with_links(scenario, AgentSettings::default(), |_| {
            LocalLink::new(store.clone(), clock.clone())
        })?;
        run.store = Some(store);
        run.clock = clock;
        Ok(run)
    }
}

impl<L: ServerLink> Simulation<L> {
    /// Nodes talk to whatever `make_link` returns. Planned injections need
    /// direct store access and are only applied by [`Simulation::in_process`].
    pub fn with_links(
        scenario: &Scenario,
        settings: AgentSettings,
        mut make_link: impl FnMut(&NodeIdentity) -> L,
    ) -> Result<Self, RunError> {
        let mut sim = Sim::new(scenario.config.clone())?;
        for t in &scenario.typists {
            sim.add_typist(t.clone())?;
        }
        let mut nodes = Vec::new();
        for id in identities(scenario)? {
            let link = make_link(&id);
            nodes.push(NodeAgent::new(id, settings.clone(), link, &mut sim)?);
        }
        let mut planned: Vec<PlannedInjection> = scenario.injections.clone();
        planned.sort_by_key(|p| p.at);
        let activity = sim
            .last_scheduled()
            .unwrap_or(0)
            .max(planned.last().map_or(0, |p| p.at + INJECTION_GRACE_US));
        Ok(Simulation {
            sim,
            nodes,
            store: None,
            clock: SimClock::default(),
            planned: planned.into(),
            injections: Vec::new(),
            end: scenario.until.unwrap_or(activity + TAIL_US),
        })
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut Sim {
        &mut self.sim
    }

    pub fn nodes(&self) -> &[NodeAgent<L>] {
        &self.nodes
    }

    pub fn store(&self) -> Option<&SharedStore> {
        self.store.as_ref()
    }

    pub fn now(&self) -> Micros {
        self.sim.now()
    }

    pub fn end(&self) -> Micros {
        self.end
    }

    pub fn is_finished(&self) -> bool {
        self.sim.now() >= self.end
    }

    /// Advances one cycle and runs every node once. Ignores the end time.
    pub fn step(&mut self) -> Result<(), RunError> {
        let t = self.sim.now() + CYCLE_US;
        self.sim.advance(t)?;
        self.clock.set(t);
        if let Some(store) = &self.store {
            while self.planned.front().is_some_and(|p| p.at <= t) {
                let planned = self.planned.pop_front().expect("checked");
                let enqueued = lock(store)
                    .enqueue_injection(&planned.mac, &planned.text, t)
                    .map_err(|e| e.to_string());
                self.injections.push(InjectionOutcome { planned, enqueued });
            }
        }
        for node in &mut self.nodes {
            node.run_cycle(&mut self.sim)?;
            self.clock.set(self.sim.now());
        }
        Ok(())
    }

    /// Runs to the end time, then flushes whatever the nodes still hold.
    pub fn run(&mut self) -> Result<(), RunError> {
        while !self.is_finished() {
            self.step()?;
        }
        let now = self.sim.now();
        for node in &mut self.nodes {
            node.flush(now);
        }
        Ok(())
    }

    pub fn report(&self) -> Result<RunReport, RunError> {
        let (server_log, commands) = match &self.store {
            Some(s) => {
                let s = lock(s);
                (s.log_text()?, s.commands().cloned().collect())
            }
            None => (String::new(), Vec::new()),
        };
        Ok(RunReport {
            end_time: self.sim.now(),
            dongles: self.sim.dongles().to_vec(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSummary {
                    node_id: n.identity().node_id().to_string(),
                    stats: n.stats(),
                    discovered: n.scanner().discovered().iter().map(|(m, d)| (*m, *d)).collect(),
                })
                .collect(),
            injections: self.injections.clone(),
            commands,
            log_digest: sha256_hex(server_log.as_bytes()),
            server_log,
        })
    }
}

/// Parses nothing, runs everything: the in-process pipeline end to end.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, RunError> {
    let mut run = Simulation::in_process(scenario)?;
    run.run()?;
    run.report()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = r#"
        config seed=7 loss=0.0 noise=4 offset=random
        typist mac=CD1122AA55 ch=25 start=5000000 delay=100000 text="hello world" keepalive=100000
        inject at=9000000 mac=CD1122AA55 text="ok"
    "#;

    #[test]
    fn hello_world_round_trip() {
        let scenario = Scenario::parse(SCENARIO).unwrap();
        let mut run = Simulation::in_process(&scenario).unwrap();
        run.run().unwrap();
        let mac: MacAddress = "CD1122AA55".parse().unwrap();
        let store = lock(run.store().unwrap());
        assert_eq!(store.text_view(&mac).unwrap(), "hello world");
        drop(store);
        let report = run.report().unwrap();
        assert_eq!(report.dongles[0].typed_output, "hello worldok");
        assert_eq!(report.commands[0].status, CommandStatus::Done);
        assert_eq!(report.log_digest.len(), 64);
        assert!(report.to_string().contains("server_log_sha256"));
    }

    #[test]
    fn same_seed_same_log() {
        let scenario = Scenario::parse(SCENARIO).unwrap();
        let a = run_scenario(&scenario).unwrap();
        let b = run_scenario(&scenario).unwrap();
        assert_eq!(a.server_log, b.server_log);
        assert_eq!(a, b);
    }

    #[test]
    fn injection_for_unknown_keyboard_is_recorded() {
        let scenario = Scenario::parse(
            "typist mac=CD1122AA55 ch=3 start=0 delay=100000 text=a\ninject at=10000 mac=CD00000000 text=x",
        )
        .unwrap();
        let report = run_scenario(&scenario).unwrap();
        assert!(report.injections[0].enqueued.is_err());
    }

    #[test]
    fn default_node_and_explicit_until() {
        let scenario = Scenario::parse("config until=50000\nnode id=desk-1 location=\"lab\"").unwrap();
        let mut run = Simulation::in_process(&scenario).unwrap();
        run.run().unwrap();
        assert_eq!(run.now(), 50_000);
        assert_eq!(run.nodes()[0].identity().node_id(), "desk-1");
        let store = lock(run.store().unwrap());
        assert_eq!(store.nodes().next().unwrap().location.label, "lab");
    }
}
