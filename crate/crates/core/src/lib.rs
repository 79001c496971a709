//! Simulated wireless keyboard eavesdropping and injection toolkit.
//!
//! The crate is organized bottom-up:
//!
//! * [`esb`]: bit-exact Enhanced ShockBurst frames and their CRC.
//! * [`promiscuous`]: recovering frames from raw, misaligned airstream windows.
//! * [`ms_protocol`]: the Microsoft keyboard payload layer (detection, XOR
//!   de-whitening, keystroke decode and encode).
//! * [`rf_sim`]: a deterministic discrete-event model of the 2.4 GHz medium
//!   with typists, dongles and attachable sniffers.
//! * [`scanner`]: the channel sweep / lock state machine.
//! * [`node_agent`]: a capture node that drives a scanner and talks to the
//!   capture server.
//! * [`capture_server`]: the transport-independent capture store, command
//!   queue and wire formats.
//! * [`runner`]: runs a whole scenario (simulator, nodes, server) in-process.

pub mod capture_server;
pub mod channel;
pub mod esb;
pub mod ms_protocol;
pub mod node_agent;
pub mod promiscuous;
pub mod rf_sim;
pub mod runner;
pub mod scanner;

pub use channel::Channel;
pub use esb::{EsbFrame, MacAddress, PacketControlField};

/// Simulation or node time, in microseconds.
pub type Micros = u64;
