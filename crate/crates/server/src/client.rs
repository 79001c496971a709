use std::time::Duration;

use serde_json::Value;
use thiserror::Error;
use ureq::Agent;

use keyjack_core::capture_server::{wire, CommandStatus, IngestAck, PendingCommand};
use keyjack_core::node_agent::{CaptureRecord, LinkError, NodeIdentity, ServerLink};
use keyjack_core::MacAddress;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("server answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Decode(String),
}

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn finish(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<String, ClientError> {
    let mut resp = result.map_err(|e| ClientError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| ClientError::Transport(e.to_string()))?;
    if (200..300).contains(&status) {
        Ok(body)
    } else {
        Err(ClientError::Status { status, body })
    }
}

fn base_url(server: &str) -> String {
    server.trim_end_matches('/').to_string()
}

/// Node side of the wire protocol over HTTP.
pub struct HttpLink {
    base: String,
    agent: Agent,
}

impl HttpLink {
    pub fn new(server: &str) -> Self {
        HttpLink {
            base: base_url(server),
            agent: agent(Duration::from_secs(5)),
        }
    }

    fn post(&self, path: &str, body: String) -> Result<String, LinkError> {
        let r = self
            .agent
            .post(format!("{}{path}", self.base))
            .content_type("text/plain; charset=utf-8")
            .send(body);
        finish(r).map_err(to_link_error)
    }
}

fn to_link_error(e: ClientError) -> LinkError {
    match e {
        ClientError::Status { status, body } if (400..500).contains(&status) => LinkError::Refused(body),
        other => LinkError::Unreachable(other.to_string()),
    }
}

impl ServerLink for HttpLink {
    fn announce(&mut self, identity: &NodeIdentity) -> Result<(), LinkError> {
        self.post("/api/nodes", wire::encode_announce(identity)).map(|_| ())
    }

    fn ingest(&mut self, batch: &[CaptureRecord]) -> Result<IngestAck, LinkError> {
        let body = self.post("/api/ingest", wire::encode_batch(batch))?;
        body.parse().map_err(|e: wire::WireError| LinkError::Unreachable(e.to_string()))
    }

    fn poll_commands(&mut self, node_id: &str) -> Result<Vec<PendingCommand>, LinkError> {
        let r = self
            .agent
            .get(format!("{}/api/commands", self.base))
            .query("node_id", node_id)
            .call();
        let body = finish(r).map_err(to_link_error)?;
        wire::decode_commands(&body).map_err(|e| LinkError::Unreachable(e.to_string()))
    }

    fn update_status(&mut self, node_id: &str, command_id: u64, status: &CommandStatus) -> Result<(), LinkError> {
        self.post(
            &format!("/api/commands/{command_id}/status"),
            wire::encode_status(node_id, status),
        )
        .map(|_| ())
    }
}

/// A small client for the operator JSON API.
pub struct OperatorClient {
    base: String,
    agent: Agent,
}

impl OperatorClient {
    pub fn new(server: &str) -> Self {
        OperatorClient {
            base: base_url(server),
            agent: agent(Duration::from_secs(10)),
        }
    }

    pub fn get_json(&self, path: &str) -> Result<Value, ClientError> {
        let body = finish(self.agent.get(format!("{}{path}", self.base)).call())?;
        serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn post_json(&self, path: &str, value: &Value) -> Result<Value, ClientError> {
        let r = self
            .agent
            .post(format!("{}{path}", self.base))
            .content_type("application/json")
            .send(value.to_string());
        let body = finish(r)?;
        serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Queues an injection and returns its command id.
    pub fn inject(&self, mac: &MacAddress, text: &str) -> Result<u64, ClientError> {
        let v = self.post_json(
            &format!("/api/keyboards/{}/inject", mac.to_lower_hex()),
            &serde_json::json!({ "text": text }),
        )?;
        v["command_id"].as_u64().ok_or_else(|| ClientError::Decode(v.to_string()))
    }

    pub fn injection(&self, id: u64) -> Result<Value, ClientError> {
        self.get_json(&format!("/api/injections/{id}"))
    }
}
