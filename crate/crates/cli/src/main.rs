use std::io::{self, BufRead};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use keyjack_core::capture_server::CaptureStore;
use keyjack_core::esb::hexdump::{self, format_frame, format_recovered};
use keyjack_core::esb::EsbFrame;
use keyjack_core::ms_protocol::{self, hid_to_char};
use keyjack_core::node_agent::AgentSettings;
use keyjack_core::promiscuous::{recover_frames, AirCapture};
use keyjack_core::rf_sim::scenario::{NodeSpec, Scenario};
use keyjack_core::runner::{SharedStore, Simulation};
use keyjack_core::{Channel, MacAddress};
use keyjack_server::{AppState, HttpLink, OperatorClient};

#[derive(Parser)]
#[command(name = "keyjack", version, about = "Simulated wireless keyboard capture and injection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the capture server.
    Serve(ServeArgs),
    /// Run a capture node against a simulated radio, reporting to a server.
    Node(NodeArgs),
    /// Run a scenario in-process and print dongle output and the log digest.
    Simulate(SimulateArgs),
    /// Decode a raw capture (hex) or a frame line. Reads stdin when given `-`.
    Decode {
        #[arg(required = true, num_args = 1..)]
        hexdump: Vec<String>,
    },
    /// Queue an injection on a running server.
    Inject(InjectArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "KEYJACK_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Directory for the record log and scripts. In-memory if omitted.
    #[arg(long, env = "KEYJACK_DATA")]
    data: Option<PathBuf>,
    /// Directory of console files served under `/`.
    #[arg(long = "static", env = "KEYJACK_STATIC")]
    static_dir: Option<PathBuf>,
}

#[derive(Args)]
struct NodeArgs {
    #[arg(long, env = "KEYJACK_SERVER")]
    server: String,
    /// Overrides the scenario's node list with this single node.
    #[arg(long, env = "KEYJACK_NODE_ID")]
    node_id: Option<String>,
    #[arg(long, env = "KEYJACK_LOCATION", default_value = "")]
    location: String,
    #[arg(long, allow_hyphen_values = true)]
    lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lon: Option<f64>,
    /// Scenario providing the simulated radio environment.
    #[arg(long, env = "KEYJACK_SCENARIO")]
    scenario: PathBuf,
    /// Simulated seconds per wall second; 0 runs as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long)]
    report_idles: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Also write the full server log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long, env = "KEYJACK_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    #[arg(long)]
    mac: MacAddress,
    #[arg(long)]
    text: String,
    /// Wait until the command finishes and exit non-zero if it failed.
    #[arg(long)]
    wait: bool,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Serve(a) => serve(a),
        Command::Node(a) => node(a),
        Command::Simulate(a) => simulate(a),
        Command::Decode { hexdump } => decode(hexdump),
        Command::Inject(a) => inject(a),
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let store = match &a.data {
        Some(dir) => CaptureStore::open(dir).with_context(|| format!("opening {}", dir.display()))?,
        None => CaptureStore::in_memory(),
    };
    let store: SharedStore = Arc::new(Mutex::new(store));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.listen).await?;
        eprintln!("keyjack server on http://{}", listener.local_addr()?);
        keyjack_server::serve(listener, AppState::new(store), a.static_dir).await?;
        Ok(())
    })
}

fn load_scenario(path: &PathBuf) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn node(a: NodeArgs) -> Result<()> {
    let mut scenario = load_scenario(&a.scenario)?;
    if let Some(id) = a.node_id {
        scenario.nodes = vec![NodeSpec {
            id,
            location: a.location,
            lat: a.lat,
            lon: a.lon,
        }];
    }
    if !scenario.injections.is_empty() {
        eprintln!("note: scenario inject directives are ignored in node mode; use `keyjack inject`");
    }
    let settings = AgentSettings {
        report_idles: a.report_idles,
        ..Default::default()
    };
    let mut run = Simulation::with_links(&scenario, settings, |_| HttpLink::new(&a.server))?;
    let started = Instant::now();
    while !run.is_finished() {
        run.step()?;
        if a.speed > 0.0 {
            let due = Duration::from_secs_f64(run.now() as f64 / 1e6 / a.speed);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                thread::sleep(wait);
            }
        }
    }
    run.run()?;
    let report = run.report()?;
    for d in &report.dongles {
        println!("dongle {} ch={} output={:?}", d.mac, d.channel.number(), d.typed_output);
    }
    for n in &report.nodes {
        println!(
            "node {} sent={} queued_dropped={} failed_flushes={}",
            n.node_id, n.stats.records_sent, n.stats.records_dropped, n.stats.failed_flushes
        );
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let report = keyjack_core::runner::run_scenario(&scenario)?;
    if let Some(path) = &a.log {
        std::fs::write(path, &report.server_log).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{report}");
    Ok(())
}

fn describe_ms(frame: &EsbFrame) -> Option<String> {
    if !ms_protocol::is_ms_keyboard(frame) {
        return None;
    }
    Some(match ms_protocol::decode(frame) {
        Ok(p) => {
            let ch = if p.is_keystroke() { hid_to_char(p.hid_code, p.modifiers) } else { None };
            format!(
                "  ms-keyboard type={} seq={} hid={:02x} mods={:02x} char={}",
                p.packet_type,
                p.sequence,
                p.hid_code,
                p.modifiers.bits(),
                ch.map_or("-".to_string(), |c| format!("{c:?}"))
            )
        }
        Err(e) => format!("  ms-keyboard undecodable: {e}"),
    })
}

fn decode(args: Vec<String>) -> Result<()> {
    let inputs: Vec<String> = if args == ["-"] {
        io::stdin().lock().lines().collect::<Result<_, _>>()?
    } else {
        vec![args.join(" ")]
    };
    let mut found = 0;
    for input in inputs.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if input.contains("addr=") {
            let (_, frame) = hexdump::parse_frame_line(input)?;
            println!("{}", format_frame(&frame));
            if let Some(line) = describe_ms(&frame) {
                println!("{line}");
            }
            found += 1;
            continue;
        }
        let digits: String = input.chars().filter(|c| !c.is_whitespace() && *c != ':').collect();
        let Some(raw) = hexdump::from_hex(&digits) else {
            bail!("not hex and not a frame line: {input}");
        };
        let capture = AirCapture {
            raw,
            channel: Channel::new(0)?,
            t: 0,
        };
        for r in recover_frames(&capture) {
            println!("{}", format_recovered(r.bit_position(), &r.frame));
            if let Some(line) = describe_ms(&r.frame) {
                println!("{line}");
            }
            found += 1;
        }
    }
    if found == 0 {
        bail!("no valid frame found");
    }
    Ok(())
}

fn inject(a: InjectArgs) -> Result<()> {
    let op = OperatorClient::new(&a.server);
    let id = op.inject(&a.mac, &a.text)?;
    println!("command {id} queued");
    if !a.wait {
        return Ok(());
    }
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let c = op.injection(id)?;
        let state = c["status"]["state"].as_str().unwrap_or_default().to_string();
        match state.as_str() {
            "done" => {
                println!("command {id} done by {}", c["node_id"].as_str().unwrap_or("?"));
                return Ok(());
            }
            "failed" => bail!("command {id} failed: {}", c["status"]["reason"].as_str().unwrap_or("?")),
            _ if Instant::now() > deadline => bail!("command {id} still {state} after 120 s"),
            _ => thread::sleep(Duration::from_millis(250)),
        }
    }
}
