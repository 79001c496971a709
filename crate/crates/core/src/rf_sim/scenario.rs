//! Scenario files: one directive per line.
//!
//! ```text
//! # comment
//! config seed=42 loss=0.0 noise=4 offset=random until=30000000
//! typist mac=CD1122AA55 ch=25 start=0 delay=100000 text="hello world" keepalive=100000
//! node id=node-1 location="desk 4" lat=48.85 lon=2.35
//! inject at=20000000 mac=CD1122AA55 text="ok"
//! ```
//!
//! Values may be double-quoted; inside quotes `\"`, `\\`, `\n` and `\t` are
//! recognized. `until`, `keepalive`, `node` and `inject` are optional.

use thiserror::Error;

use super::{BitOffsetMode, SimConfig, TypistScript};
use crate::esb::MacAddress;
use crate::{Channel, Micros};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ScenarioError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub location: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

/// An operator injection request issued at a given simulation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedInjection {
    pub at: Micros,
    pub mac: MacAddress,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub config: SimConfig,
    pub until: Option<Micros>,
    pub typists: Vec<TypistScript>,
    pub nodes: Vec<NodeSpec>,
    pub injections: Vec<PlannedInjection>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut scenario = Scenario::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: String| ScenarioError { line, reason };
            let (directive, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
            let mut fields = Fields::new(tokenize(rest).map_err(err)?);
            match directive {
                "config" => {
                    if let Some(v) = fields.take("seed") {
                        scenario.config.seed = parse_num(&v, "seed").map_err(err)?;
                    }
                    if let Some(v) = fields.take("loss") {
                        scenario.config.loss_probability =
                            v.parse().map_err(|_| err(format!("bad loss `{v}`")))?;
                    }
                    if let Some(v) = fields.take("noise") {
                        scenario.config.noise_bytes_per_window = parse_num(&v, "noise").map_err(err)?;
                    }
                    if let Some(v) = fields.take("offset") {
                        scenario.config.bit_offset_mode = match v.as_str() {
                            "random" => BitOffsetMode::Random,
                            k => match k.parse::<u8>() {
                                Ok(k) if k < 8 => BitOffsetMode::Fixed(k),
                                _ => return Err(err(format!("offset must be random or 0..7, got `{k}`"))),
                            },
                        };
                    }
                    if let Some(v) = fields.take("until") {
                        scenario.until = Some(parse_num(&v, "until").map_err(err)?);
                    }
                }
                "typist" => {
                    let typist = TypistScript {
                        mac: parse_mac(&fields.require("mac").map_err(err)?).map_err(err)?,
                        channel: parse_channel(&fields.require("ch").map_err(err)?).map_err(err)?,
                        start_time: parse_num(&fields.require("start").map_err(err)?, "start").map_err(err)?,
                        inter_key_delay: parse_num(&fields.require("delay").map_err(err)?, "delay").map_err(err)?,
                        text: fields.require("text").map_err(err)?,
                        keepalive: fields
                            .take("keepalive")
                            .map(|v| parse_num(&v, "keepalive"))
                            .transpose()
                            .map_err(err)?,
                    };
                    scenario.typists.push(typist);
                }
                "node" => {
                    let coord = |v: Option<String>, name: &str| -> Result<Option<f64>, String> {
                        v.map(|v| v.parse::<f64>().map_err(|_| format!("bad {name} `{v}`")))
                            .transpose()
                    };
                    let node = NodeSpec {
                        id: fields.require("id").map_err(err)?,
                        location: fields.take("location").unwrap_or_default(),
                        lat: coord(fields.take("lat"), "lat").map_err(err)?,
                        lon: coord(fields.take("lon"), "lon").map_err(err)?,
                    };
                    scenario.nodes.push(node);
                }
                "inject" => {
                    let inj = PlannedInjection {
                        at: parse_num(&fields.require("at").map_err(err)?, "at").map_err(err)?,
                        mac: parse_mac(&fields.require("mac").map_err(err)?).map_err(err)?,
                        text: fields.require("text").map_err(err)?,
                    };
                    scenario.injections.push(inj);
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
            fields.finish().map_err(err)?;
        }
        Ok(scenario)
    }
}

struct Fields(Vec<(String, String)>);

impl Fields {
    fn new(pairs: Vec<(String, String)>) -> Self {
        Fields(pairs)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        let i = self.0.iter().position(|(k, _)| k == key)?;
        Some(self.0.remove(i).1)
    }

    fn require(&mut self, key: &str) -> Result<String, String> {
        self.take(key).ok_or_else(|| format!("missing `{key}`"))
    }

    fn finish(self) -> Result<(), String> {
        match self.0.first() {
            Some((k, _)) => Err(format!("unexpected field `{k}`")),
            None => Ok(()),
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, name: &str) -> Result<T, String> {
    v.replace('_', "").parse().map_err(|_| format!("bad {name} `{v}`"))
}

fn parse_mac(v: &str) -> Result<MacAddress, String> {
    v.parse().map_err(|e| format!("{e}"))
}

fn parse_channel(v: &str) -> Result<Channel, String> {
    let n: u8 = parse_num(v, "ch")?;
    Channel::new(n).map_err(|e| e.to_string())
}

pub(crate) fn tokenize(rest: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut chars = rest.chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        if chars.peek().is_none() {
            return Ok(out);
        }
        let mut key = String::new();
        while let Some(c) = chars.next_if(|&c| c != '=' && !c.is_whitespace()) {
            key.push(c);
        }
        if chars.next() != Some('=') {
            return Err(format!("expected key=value near `{key}`"));
        }
        let mut value = String::new();
        if chars.next_if_eq(&'"').is_some() {
            loop {
                match chars.next() {
                    None => return Err(format!("unterminated quote in `{key}`")),
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some('n') => value.push('\n'),
                        Some('t') => value.push('\t'),
                        Some(c @ ('"' | '\\')) => value.push(c),
                        other => return Err(format!("bad escape {other:?} in `{key}`")),
                    },
                    Some(c) => value.push(c),
                }
            }
        } else {
            while let Some(c) = chars.next_if(|c| !c.is_whitespace()) {
                value.push(c);
            }
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(format!("duplicate field `{key}`"));
        }
        out.push((key, value));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example_directives() {
        let s = Scenario::parse(
            r#"
            # two directives from the docs
            config seed=42 loss=0.0 noise=4 offset=random
            typist mac=CD1122AA55 ch=25 start=0 delay=100000 text="hello world"
            node id=node-1 location="desk \"4\"" lat=48.5
            inject at=20_000_000 mac=CD1122AA55 text="ok"
            "#,
        )
        .unwrap();
        assert_eq!(s.config.seed, 42);
        assert_eq!(s.config.noise_bytes_per_window, 4);
        assert_eq!(s.config.bit_offset_mode, BitOffsetMode::Random);
        assert_eq!(s.typists.len(), 1);
        let t = &s.typists[0];
        assert_eq!(t.text, "hello world");
        assert_eq!(t.channel.number(), 25);
        assert_eq!(t.inter_key_delay, 100_000);
        assert_eq!(t.mac.to_string(), "CD1122AA55");
        assert_eq!(t.keepalive, None);
        assert_eq!(s.nodes[0].location, "desk \"4\"");
        assert_eq!(s.nodes[0].lat, Some(48.5));
        assert_eq!(s.nodes[0].lon, None);
        assert_eq!(s.injections[0].at, 20_000_000);
        assert_eq!(s.until, None);
    }

    #[test]
    fn reports_line_numbers() {
        let e = Scenario::parse("config seed=1\ntypist mac=CD1122AA55 ch=99 start=0 delay=1 text=x").unwrap_err();
        assert_eq!(e.line, 2);
        let e = Scenario::parse("config offset=9").unwrap_err();
        assert!(e.reason.contains("offset"));
        assert!(Scenario::parse("typist mac=CD1122AA55 ch=1 start=0 delay=1").is_err());
        assert!(Scenario::parse("config seed=1 color=red").is_err());
        assert!(Scenario::parse("config seed=1 seed=2").is_err());
        assert!(Scenario::parse("launch now=1").is_err());
        assert!(Scenario::parse("inject at=1 mac=CD1122AA55 text=\"open").is_err());
    }
}
