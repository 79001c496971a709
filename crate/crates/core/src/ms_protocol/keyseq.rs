//! Text notation for key sequences sent by injection commands.
//!
//! Plain characters are typed as-is. A chord or named key goes in braces:
//! `{gui+r}`, `{ctrl+alt+delete}`, `{enter}`. A literal `{` is written `{{`.

use thiserror::Error;

use super::{char_to_key, hid_to_char, Modifiers};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeySeqError {
    #[error("character {0:?} has no key on the active layout")]
    Unmapped(char),
    #[error("unterminated chord starting at char {0}")]
    Unterminated(usize),
    #[error("unknown key or modifier `{0}`")]
    UnknownName(String),
    #[error("chord `{0}` has no key")]
    NoKey(String),
}

/// One key press with its held modifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyPress {
    pub hid_code: u8,
    pub modifiers: Modifiers,
}

const NAMED_KEYS: &[(&str, u8)] = &[
    ("enter", 0x28),
    ("esc", 0x29),
    ("backspace", 0x2A),
    ("tab", 0x2B),
    ("space", 0x2C),
    ("capslock", 0x39),
    ("f1", 0x3A),
    ("f2", 0x3B),
    ("f3", 0x3C),
    ("f4", 0x3D),
    ("f5", 0x3E),
    ("f6", 0x3F),
    ("f7", 0x40),
    ("f8", 0x41),
    ("f9", 0x42),
    ("f10", 0x43),
    ("f11", 0x44),
    ("f12", 0x45),
    ("home", 0x4A),
    ("pageup", 0x4B),
    ("delete", 0x4C),
    ("end", 0x4D),
    ("pagedown", 0x4E),
    ("right", 0x4F),
    ("left", 0x50),
    ("down", 0x51),
    ("up", 0x52),
];

const MODIFIER_NAMES: &[(&str, Modifiers)] = &[
    ("ctrl", Modifiers::LCTRL),
    ("shift", Modifiers::LSHIFT),
    ("alt", Modifiers::LALT),
    ("gui", Modifiers::LGUI),
    ("win", Modifiers::LGUI),
    ("rctrl", Modifiers::RCTRL),
    ("rshift", Modifiers::RSHIFT),
    ("ralt", Modifiers::RALT),
    ("rgui", Modifiers::RGUI),
];

pub fn parse(text: &str) -> Result<Vec<KeyPress>, KeySeqError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '{' {
            if chars.get(i + 1) == Some(&'{') {
                out.push(press_for_char('{')?);
                i += 2;
                continue;
            }
            let close = chars[i + 1..]
                .iter()
                .position(|&c| c == '}')
                .ok_or(KeySeqError::Unterminated(i))?;
            let body: String = chars[i + 1..i + 1 + close].iter().collect();
            out.push(parse_chord(&body)?);
            i += close + 2;
        } else {
            out.push(press_for_char(c)?);
            i += 1;
        }
    }
    Ok(out)
}

fn press_for_char(c: char) -> Result<KeyPress, KeySeqError> {
    let (hid_code, modifiers) = char_to_key(c).ok_or(KeySeqError::Unmapped(c))?;
    Ok(KeyPress { hid_code, modifiers })
}

fn parse_chord(body: &str) -> Result<KeyPress, KeySeqError> {
    let mut modifiers = Modifiers::NONE;
    let mut key = None;
    for part in body.split('+') {
        let name = part.trim().to_ascii_lowercase();
        if let Some((_, m)) = MODIFIER_NAMES.iter().find(|(n, _)| *n == name) {
            modifiers = modifiers | *m;
        } else if let Some((_, hid)) = NAMED_KEYS.iter().find(|(n, _)| *n == name) {
            key = Some(*hid);
        } else {
            let mut cs = part.chars();
            match (cs.next(), cs.next()) {
                (Some(c), None) => {
                    let p = press_for_char(c)?;
                    modifiers = modifiers | p.modifiers;
                    key = Some(p.hid_code);
                }
                _ => return Err(KeySeqError::UnknownName(part.to_string())),
            }
        }
    }
    let hid_code = key.ok_or_else(|| KeySeqError::NoKey(body.to_string()))?;
    Ok(KeyPress { hid_code, modifiers })
}

/// Writes `text` so that [`parse`] types it literally.
pub fn escape_text(text: &str) -> String {
    text.replace('{', "{{")
}

/// What a host shows for a press: the glyph for plain or shifted keys, the
/// brace notation for anything else.
pub fn render(press: KeyPress) -> String {
    if !press.modifiers.has_command_modifier() {
        if let Some(c) = hid_to_char(press.hid_code, press.modifiers) {
            return c.to_string();
        }
    }
    let mut parts: Vec<String> = Vec::new();
    for (name, m) in MODIFIER_NAMES {
        if *name != "win" && press.modifiers.contains(*m) {
            parts.push((*name).to_string());
        }
    }
    let key = NAMED_KEYS
        .iter()
        .find(|(_, h)| *h == press.hid_code)
        .map(|(n, _)| (*n).to_string())
        .or_else(|| hid_to_char(press.hid_code, Modifiers::NONE).map(String::from))
        .unwrap_or_else(|| format!("0x{:02x}", press.hid_code));
    parts.push(key);
    format!("{{{}}}", parts.join("+"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_text_and_chords() {
        let seq = parse("Hi{gui+r}x{{").unwrap();
        assert_eq!(seq.len(), 5);
        assert_eq!(seq[0], KeyPress { hid_code: 0x0B, modifiers: Modifiers::LSHIFT });
        assert_eq!(seq[2], KeyPress { hid_code: 0x15, modifiers: Modifiers::LGUI });
        assert_eq!(seq[4], KeyPress { hid_code: 0x2F, modifiers: Modifiers::LSHIFT });
        assert_eq!(parse("{ctrl+alt+delete}").unwrap()[0].modifiers, Modifiers::LCTRL | Modifiers::LALT);
    }

    #[test]
    fn errors() {
        assert_eq!(parse("{gui+r"), Err(KeySeqError::Unterminated(0)));
        assert_eq!(parse("{hyper+r}"), Err(KeySeqError::UnknownName("hyper".into())));
        assert_eq!(parse("{ctrl}"), Err(KeySeqError::NoKey("ctrl".into())));
        assert_eq!(parse("caf\u{e9}"), Err(KeySeqError::Unmapped('\u{e9}')));
    }

    #[test]
    fn render_round_trips_through_parse() {
        for text in ["open sesame", "{gui+r}", "{enter}", "{ctrl+shift+a}", "{f5}"] {
            let rendered: String = parse(text).unwrap().into_iter().map(render).collect();
            assert_eq!(parse(&rendered).unwrap(), parse(text).unwrap(), "{text}");
        }
        assert_eq!(parse(&escape_text("a{b")).unwrap().len(), 3);
    }
}
