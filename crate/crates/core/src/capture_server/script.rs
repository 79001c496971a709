//! Attack scripts: named, ordered lists of delayed text or chord steps.
//!
//! Stored as plain text, one step per line:
//!
//! ```text
//! # open a terminal
//! delay=0 chord=gui+r
//! delay=500000 text="cmd"
//! delay=100000 chord=enter
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ms_protocol::keyseq;
use crate::rf_sim::scenario::tokenize;
use crate::Micros;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("script name `{0}` must be 1-64 chars of [A-Za-z0-9_-]")]
    BadName(String),
    #[error("script has no steps")]
    Empty,
    #[error("step {step}: {reason}")]
    BadStep { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAction {
    /// Typed literally.
    Text(String),
    /// A single chord without braces, e.g. `gui+r`.
    Chord(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Wait before this step, relative to the previous one.
    pub delay_us: Micros,
    #[serde(flatten)]
    pub action: StepAction,
}

impl ScriptStep {
    /// The step as injection command text.
    pub fn command_text(&self) -> String {
        match &self.action {
            StepAction::Text(t) => keyseq::escape_text(t),
            StepAction::Chord(c) => format!("{{{c}}}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScript {
    pub name: String,
    pub steps: Vec<ScriptStep>,
}

pub fn validate_script_name(name: &str) -> Result<(), ScriptError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ScriptError::BadName(name.to_string()))
    }
}

impl AttackScript {
    pub fn new(name: impl Into<String>, steps: Vec<ScriptStep>) -> Result<Self, ScriptError> {
        let script = AttackScript {
            name: name.into(),
            steps,
        };
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        validate_script_name(&self.name)?;
        if self.steps.is_empty() {
            return Err(ScriptError::Empty);
        }
        for (i, step) in self.steps.iter().enumerate() {
            let bad = |reason: String| ScriptError::BadStep { step: i + 1, reason };
            match &step.action {
                StepAction::Text(t) if t.is_empty() => return Err(bad("empty text".into())),
                StepAction::Chord(c) if c.contains(['{', '}']) => {
                    return Err(bad(format!("chord `{c}` must not contain braces")))
                }
                _ => {}
            }
            let presses = keyseq::parse(&step.command_text()).map_err(|e| bad(e.to_string()))?;
            if matches!(step.action, StepAction::Chord(_)) && presses.len() != 1 {
                return Err(bad("a chord step must be exactly one chord".into()));
            }
        }
        Ok(())
    }

    pub fn parse(name: &str, text: &str) -> Result<Self, ScriptError> {
        let mut steps = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let step_no = steps.len() + 1;
            let bad = |reason: String| ScriptError::BadStep { step: step_no, reason };
            let mut delay = None;
            let mut action = None;
            for (k, v) in tokenize(line).map_err(bad)? {
                match k.as_str() {
                    "delay" => delay = Some(v.replace('_', "").parse::<Micros>().map_err(|_| bad(format!("bad delay `{v}`")))?),
                    "text" if action.is_none() => action = Some(StepAction::Text(v)),
                    "chord" if action.is_none() => action = Some(StepAction::Chord(v)),
                    other => return Err(bad(format!("unexpected field `{other}`"))),
                }
            }
            steps.push(ScriptStep {
                delay_us: delay.unwrap_or(0),
                action: action.ok_or_else(|| bad("needs text= or chord=".into()))?,
            });
        }
        AttackScript::new(name, steps)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let (k, v) = match &step.action {
                StepAction::Text(t) => ("text", t),
                StepAction::Chord(c) => ("chord", c),
            };
            let quoted = v.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n").replace('\t', "\\t");
            out.push_str(&format!("delay={} {k}=\"{quoted}\"\n", step.delay_us));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let s = AttackScript::parse(
            "open-run",
            "# demo\ndelay=0 chord=gui+r\ndelay=500_000 text=\"cmd {x}\"\ndelay=100000 chord=enter\n",
        )
        .unwrap();
        assert_eq!(s.steps.len(), 3);
        assert_eq!(s.steps[1].delay_us, 500_000);
        assert_eq!(s.steps[0].command_text(), "{gui+r}");
        assert_eq!(s.steps[1].command_text(), "cmd {{x}");
        assert_eq!(AttackScript::parse("open-run", &s.to_text()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_scripts() {
        assert_eq!(AttackScript::parse("x", "# nothing\n"), Err(ScriptError::Empty));
        assert!(matches!(AttackScript::parse("a b", "text=x"), Err(ScriptError::BadName(_))));
        assert!(matches!(AttackScript::parse("x", "chord=hyper+q"), Err(ScriptError::BadStep { step: 1, .. })));
        assert!(AttackScript::parse("x", "chord=a\nchord=ctrl").is_err());
        assert!(AttackScript::parse("x", "text=a chord=b").is_err());
        assert!(AttackScript::parse("x", "delay=soon text=a").is_err());
        assert!(AttackScript::parse("x", "text=\"caf\u{e9}\"").is_err());
    }
}
