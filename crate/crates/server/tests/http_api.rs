use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use keyjack_core::capture_server::{wire, CaptureStore, CommandStatus};
use keyjack_core::ms_protocol::{char_to_key, PacketType};
use keyjack_core::node_agent::{AgentSettings, CaptureRecord, LinkError, Location, NodeIdentity, ServerLink};
use keyjack_core::rf_sim::scenario::Scenario;
use keyjack_core::runner::{lock, SharedStore, Simulation};
use keyjack_core::{Channel, MacAddress};
use keyjack_server::{api, AppState, HttpLink, OperatorClient};
use serde_json::{json, Value};

const MAC: &str = "cd1122aa55";

struct TestServer {
    addr: SocketAddr,
    store: SharedStore,
    clock: Arc<AtomicU64>,
}

impl TestServer {
    fn start(static_dir: Option<std::path::PathBuf>) -> Self {
        let store: SharedStore = Arc::new(Mutex::new(CaptureStore::in_memory()));
        let clock = Arc::new(AtomicU64::new(1_000));
        let c = clock.clone();
        let state = AppState::with_clock(store.clone(), Arc::new(move || c.load(Ordering::SeqCst)));
        let addr = api::spawn("127.0.0.1:0".parse().unwrap(), state, static_dir).unwrap();
        TestServer { addr, store, clock }
    }

    fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    fn raw(&self, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(5)))
            .build()
            .into();
        let url = format!("{}{path}", self.url());
        let resp = match (method, body) {
            ("GET", _) => agent.get(&url).call(),
            (_, Some(b)) if b.starts_with('{') => agent.post(&url).content_type("application/json").send(b),
            (_, b) => agent.post(&url).send(b.unwrap_or("")),
        };
        let mut resp = resp.unwrap();
        (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
    }
}

fn typed(node: &str, text: &str, t0: u64) -> Vec<CaptureRecord> {
    let mac: MacAddress = MAC.parse().unwrap();
    text.chars()
        .enumerate()
        .map(|(i, c)| {
            let (hid, mods) = char_to_key(c).unwrap();
            CaptureRecord::new(node.into(), mac, Channel::new(25).unwrap(), t0 + i as u64 * 100_000, PacketType::Keystroke, hid, mods)
        })
        .collect()
}

#[test]
fn ingest_acks_over_the_wire() {
    let srv = TestServer::start(None);
    let body = wire::encode_batch(&typed("node-1", "secret", 0));
    assert_eq!(srv.raw("POST", "/api/ingest", Some(&body)), (200, "accepted=6 dedup=0".into()));
    assert_eq!(srv.raw("POST", "/api/ingest", Some(&body)), (200, "accepted=0 dedup=6".into()));

    let mut lines: Vec<String> = wire::encode_batch(&typed("node-1", "hunter", 10_000_000)).lines().map(String::from).collect();
    lines[3] = "v1|node-1|cd1122aa55|25|x|78|04|00".into();
    let (code, ack) = srv.raw("POST", "/api/ingest", Some(&lines.join("\n")));
    assert_eq!(code, 200);
    assert!(ack.starts_with("accepted=5 dedup=0\nrejected line=4 reason="), "{ack}");
}

#[test]
fn operator_queries() {
    let srv = TestServer::start(None);
    lock(&srv.store).ingest_records(&typed("node-1", "my password is hunter2", 5_000_000), 0).unwrap();
    let op = OperatorClient::new(&srv.url());

    let kbs = op.get_json("/api/keyboards").unwrap();
    assert_eq!(kbs[0]["mac"], "CD1122AA55");
    assert_eq!(kbs[0]["record_count"], 22);
    assert_eq!(kbs[0]["nodes"], json!(["node-1"]));

    let all = op.get_json(&format!("/api/keyboards/{MAC}/captures")).unwrap();
    assert_eq!(all["text"], "my password is hunter2");
    assert_eq!(all["records"].as_array().unwrap().len(), 22);
    assert_eq!(all["records"][0]["t"], 5_000_000);
    assert_eq!(all["records"][0]["ch"], "m");

    let none = op.get_json(&format!("/api/keyboards/{MAC}/captures?from=0&to=10")).unwrap();
    assert_eq!(none["records"], json!([]));
    assert_eq!(none["text"], "");

    let (code, body) = srv.raw("GET", "/api/keyboards/cd00000000/captures", None);
    assert_eq!(code, 404, "{body}");
    assert_eq!(srv.raw("GET", &format!("/api/keyboards/{MAC}/captures?from=9&to=1"), None).0, 400);
    assert_eq!(srv.raw("GET", "/api/keyboards/zz/captures", None).0, 400);

    let hits = op.get_json("/api/search?q=password").unwrap();
    assert_eq!(hits.as_array().unwrap().len(), 1);
    assert_eq!(hits[0]["context"], "my password is hunter2");
    assert_eq!(hits[0]["t"], 5_300_000);
    assert_eq!(op.get_json("/api/search?q=swordfish").unwrap(), json!([]));
    assert_eq!(srv.raw("GET", "/api/search?q=", None).0, 400);
}

#[test]
fn command_lifecycle_over_http() {
    let srv = TestServer::start(None);
    let op = OperatorClient::new(&srv.url());
    let mac: MacAddress = MAC.parse().unwrap();
    assert!(op.inject(&mac, "ok").is_err(), "unknown keyboards are refused");

    lock(&srv.store).ingest_records(&typed("node-1", "a", 0), 0).unwrap();
    lock(&srv.store).ingest_records(&typed("node-2", "a", 0), 0).unwrap();
    let id = op.inject(&mac, "ok").unwrap();
    assert_eq!(op.injection(id).unwrap()["status"]["state"], "pending");

    let (code, body) = srv.raw("GET", "/api/commands?node_id=node-1", None);
    assert_eq!(code, 200);
    assert_eq!(body, format!("v1|{id}|cd1122aa55|b2s=\n"));
    assert_eq!(srv.raw("GET", "/api/commands", None).0, 400);

    let mut n1 = HttpLink::new(&srv.url());
    let mut n2 = HttpLink::new(&srv.url());
    assert_eq!(n1.poll_commands("node-1").unwrap()[0].text, "ok");
    n1.update_status("node-1", id, &CommandStatus::Running).unwrap();
    assert!(matches!(n2.update_status("node-2", id, &CommandStatus::Running), Err(LinkError::Refused(_))));
    assert!(n2.poll_commands("node-2").unwrap().is_empty());
    n1.update_status("node-1", id, &CommandStatus::Done).unwrap();
    let c = op.injection(id).unwrap();
    assert_eq!(c["status"]["state"], "done");
    assert_eq!(c["node_id"], "node-1");
    assert_eq!(srv.raw("GET", "/api/injections/999", None).0, 404);
    assert_eq!(op.get_json("/api/injections").unwrap().as_array().unwrap().len(), 1);
    assert_eq!(srv.raw("POST", "/api/commands/999/status", Some("v1|node-1|done")).0, 404);
    assert_eq!(srv.raw("POST", &format!("/api/commands/{id}/status"), Some("garbage")).0, 400);
}

#[test]
fn unclaimed_command_fails_after_timeout() {
    let srv = TestServer::start(None);
    lock(&srv.store).ingest_records(&typed("node-1", "a", 0), 0).unwrap();
    let op = OperatorClient::new(&srv.url());
    let id = op.inject(&MAC.parse().unwrap(), "x").unwrap();
    srv.clock.fetch_add(60_000_000, Ordering::SeqCst);
    let c = op.injection(id).unwrap();
    assert_eq!(c["status"], json!({ "state": "failed", "reason": "no-node" }));
}

#[test]
fn scripts_over_http() {
    let srv = TestServer::start(None);
    lock(&srv.store).ingest_records(&typed("node-1", "a", 0), 0).unwrap();
    let op = OperatorClient::new(&srv.url());
    let script = json!({
        "name": "open-run",
        "steps": [
            { "delay_us": 0, "chord": "gui+r" },
            { "delay_us": 500000, "text": "cmd" },
            { "delay_us": 100000, "chord": "enter" }
        ]
    });
    op.post_json("/api/scripts", &script).unwrap();
    assert_eq!(srv.raw("POST", "/api/scripts", Some(&script.to_string())).0, 409);
    let bad = json!({ "name": "empty", "steps": [] });
    assert_eq!(srv.raw("POST", "/api/scripts", Some(&bad.to_string())).0, 400);
    assert_eq!(op.get_json("/api/scripts").unwrap()[0], script);

    let run = op.post_json(&format!("/api/keyboards/{MAC}/scripts/open-run/run"), &json!({})).unwrap();
    let ids: Vec<u64> = run["command_ids"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(ids.len(), 3);
    let texts: Vec<Value> = ids.iter().map(|i| op.injection(*i).unwrap()["text"].clone()).collect();
    assert_eq!(texts, vec![json!("{gui+r}"), json!("cmd"), json!("{enter}")]);
    assert_eq!(op.injection(ids[2]).unwrap()["origin"]["step"], 3);
    assert_eq!(srv.raw("POST", &format!("/api/keyboards/{MAC}/scripts/nope/run"), Some("{}")).0, 404);
}

#[test]
fn nodes_announce_with_location() {
    let srv = TestServer::start(None);
    let mut link = HttpLink::new(&srv.url());
    let id = NodeIdentity::new(
        "desk-4",
        Location {
            label: "lab, bench 4".into(),
            lat: Some(48.85),
            lon: Some(2.35),
        },
    )
    .unwrap();
    link.announce(&id).unwrap();
    let nodes = OperatorClient::new(&srv.url()).get_json("/api/nodes").unwrap();
    assert_eq!(nodes[0]["node_id"], "desk-4");
    assert_eq!(nodes[0]["location"]["label"], "lab, bench 4");
    assert_eq!(nodes[0]["location"]["lat"], 48.85);
    assert_eq!(srv.raw("POST", "/api/nodes", Some("v1|bad id|eA==||")).0, 400);
}

#[test]
fn serves_console_files_at_root() {
    let srv = TestServer::start(None);
    let (code, body) = srv.raw("GET", "/", None);
    assert_eq!(code, 200);
    assert!(body.contains("KeyJack"));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>console</html>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let srv = TestServer::start(Some(dir.path().to_path_buf()));
    assert_eq!(srv.raw("GET", "/", None), (200, "<html>console</html>".into()));
    assert_eq!(srv.raw("GET", "/app.js", None), (200, "console.log(1)".into()));
    assert_eq!(srv.raw("GET", "/missing.css", None).0, 404);
    assert_eq!(srv.raw("GET", "/api/keyboards", None), (200, "[]".into()));
}

#[test]
fn offline_server_is_unreachable_not_refused() {
    let mut link = HttpLink::new("http://127.0.0.1:9");
    assert!(matches!(link.ingest(&typed("n", "a", 0)), Err(LinkError::Unreachable(_))));
}

#[test]
fn simulated_node_over_http() {
    let srv = TestServer::start(None);
    let scenario = Scenario::parse(
        "config seed=11 noise=4 offset=random\n\
         typist mac=CD1122AA55 ch=5 start=1000000 delay=100000 text=\"secret\" keepalive=100000\n\
         node id=node-7 location=\"desk\"",
    )
    .unwrap();
    let url = srv.url();
    let mut run = Simulation::with_links(&scenario, AgentSettings::default(), |_| HttpLink::new(&url)).unwrap();
    while run.now() < 5_000_000 {
        run.step().unwrap();
    }
    let op = OperatorClient::new(&srv.url());
    let view = op.get_json(&format!("/api/keyboards/{MAC}/captures")).unwrap();
    assert_eq!(view["text"], "secret");
    assert_eq!(view["records"][0]["node_id"], "node-7");

    let id = op.inject(&MAC.parse().unwrap(), "ok").unwrap();
    while run.now() < 7_000_000 {
        run.step().unwrap();
    }
    assert_eq!(op.injection(id).unwrap()["status"]["state"], "done");
    assert_eq!(run.sim().dongles()[0].typed_output, "secretok");
}
