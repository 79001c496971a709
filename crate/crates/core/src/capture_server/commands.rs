//! Injection command lifecycle: pending, running, then done or failed.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::wire::PendingCommand;
use crate::esb::MacAddress;
use crate::Micros;

/// Pending commands no node has claimed within this time fail with `no-node`.
pub const CLAIM_TIMEOUT_US: Micros = 60_000_000;
/// Running commands whose node never reports back fail with `node-timeout`.
pub const RUN_TIMEOUT_US: Micros = 60_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", content = "reason", rename_all = "lowercase")]
pub enum CommandStatus {
    Pending,
    Running,
    Done,
    Failed(String),
}

impl CommandStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CommandStatus::Pending => "pending",
            CommandStatus::Running => "running",
            CommandStatus::Done => "done",
            CommandStatus::Failed(_) => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, CommandStatus::Done | CommandStatus::Failed(_))
    }
}

impl fmt::Display for CommandStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandStatus::Failed(reason) => write!(f, "failed({reason})"),
            other => f.write_str(other.label()),
        }
    }
}

/// Where a command came from when it was expanded from a script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScriptOrigin {
    pub script: String,
    pub run_id: u64,
    /// 1-based step number.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InjectionCommand {
    pub command_id: u64,
    pub mac: MacAddress,
    pub text: String,
    pub node_id: Option<String>,
    pub status: CommandStatus,
    pub created_at: Micros,
    /// Not offered to nodes before this time.
    pub ready_at: Micros,
    pub updated_at: Micros,
    pub origin: Option<ScriptOrigin>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("no command {0}")]
    UnknownCommand(u64),
    #[error("command {id} cannot go from {from} to {to}")]
    InvalidTransition { id: u64, from: String, to: String },
    #[error("command {id} is owned by {owner}")]
    NotOwner { id: u64, owner: String },
}

#[derive(Debug, Clone, Default)]
pub struct CommandBook {
    commands: BTreeMap<u64, InjectionCommand>,
    next_id: u64,
}

impl CommandBook {
    pub fn new() -> Self {
        CommandBook {
            commands: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn create(&mut self, mac: MacAddress, text: String, now: Micros, ready_at: Micros, origin: Option<ScriptOrigin>) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.commands.insert(
            id,
            InjectionCommand {
                command_id: id,
                mac,
                text,
                node_id: None,
                status: CommandStatus::Pending,
                created_at: now,
                ready_at,
                updated_at: now,
                origin,
            },
        );
        id
    }

    pub fn get(&self, id: u64) -> Option<&InjectionCommand> {
        self.commands.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &InjectionCommand> {
        self.commands.values()
    }

    /// Fails commands that waited too long for a node.
    pub fn expire(&mut self, now: Micros) {
        for c in self.commands.values_mut() {
            let reason = match c.status {
                CommandStatus::Pending if now >= c.ready_at.saturating_add(CLAIM_TIMEOUT_US) => "no-node",
                CommandStatus::Running if now >= c.updated_at.saturating_add(RUN_TIMEOUT_US) => "node-timeout",
                _ => continue,
            };
            c.status = CommandStatus::Failed(reason.into());
            c.updated_at = now;
        }
    }

    /// The oldest ready pending command for each of `macs` that has nothing
    /// running.
    pub fn offer(&self, macs: &[MacAddress], now: Micros) -> Vec<PendingCommand> {
        let mut out = Vec::new();
        for mac in macs {
            let mut for_mac = self.commands.values().filter(|c| c.mac == *mac);
            if for_mac.clone().any(|c| c.status == CommandStatus::Running) {
                continue;
            }
            if let Some(c) = for_mac.find(|c| c.status == CommandStatus::Pending) {
                if c.ready_at <= now {
                    out.push(PendingCommand {
                        command_id: c.command_id,
                        mac: c.mac,
                        text: c.text.clone(),
                    });
                }
            }
        }
        out
    }

    /// Applies a node's status report. Claiming (pending to running) is a
    /// compare-and-set: only the first node succeeds.
    pub fn update(&mut self, id: u64, node_id: &str, status: CommandStatus, now: Micros) -> Result<(), CommandError> {
        let c = self.commands.get_mut(&id).ok_or(CommandError::UnknownCommand(id))?;
        let invalid = |c: &InjectionCommand, to: &CommandStatus| CommandError::InvalidTransition {
            id,
            from: c.status.to_string(),
            to: to.to_string(),
        };
        match (&c.status, &status) {
            (CommandStatus::Pending, CommandStatus::Running) => {
                if c.ready_at > now {
                    return Err(invalid(c, &status));
                }
                c.node_id = Some(node_id.to_string());
            }
            (CommandStatus::Running, CommandStatus::Done | CommandStatus::Failed(_)) => {
                let owner = c.node_id.as_deref().unwrap_or_default();
                if owner != node_id {
                    return Err(CommandError::NotOwner {
                        id,
                        owner: owner.to_string(),
                    });
                }
            }
            _ => return Err(invalid(c, &status)),
        }
        c.status = status;
        c.updated_at = now;
        Ok(())
    }
}
