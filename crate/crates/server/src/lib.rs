//! HTTP front end for the capture server, and the node-side client for it.
//!
//! Node endpoints speak the line-oriented wire format from
//! [`keyjack_core::capture_server::wire`]; operator endpoints speak JSON.

pub mod api;
pub mod client;

pub use api::{router, serve, spawn, wall_clock_us, AppState, Clock};
pub use client::{HttpLink, OperatorClient};
