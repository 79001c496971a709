//! Table-driven HID usage → character mapping.
//!
//! Layouts are text files of `hid=04 base=a shift=A` lines. The US layout is
//! compiled in; other layouts can be loaded with [`Keymap::parse`].

use std::collections::HashMap;
use std::sync::OnceLock;

use thiserror::Error;

use super::Modifiers;

const US_QWERTY: &str = include_str!("../../data/us_qwerty.keymap");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeymapError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: hid {hid:#04x} defined twice")]
    Duplicate { line: usize, hid: u8 },
}

#[derive(Debug, Clone)]
pub struct Keymap {
    name: String,
    glyphs: [Option<(char, char)>; 256],
    reverse: HashMap<char, (u8, bool)>,
}

impl Keymap {
    pub fn parse(text: &str) -> Result<Self, KeymapError> {
        let mut name = String::from("unnamed");
        let mut glyphs = [None; 256];
        let mut reverse = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(n) = comment.trim().strip_prefix("keymap ") {
                    name = n.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| KeymapError::Syntax {
                line: line_no,
                reason: reason.to_string(),
            };
            let (mut hid, mut base, mut shift) = (None, None, None);
            for token in line.split_whitespace() {
                let (key, value) = token.split_once('=').ok_or_else(|| err("expected key=value"))?;
                match key {
                    "hid" => hid = Some(u8::from_str_radix(value, 16).map_err(|_| err("bad hid"))?),
                    "base" => base = Some(glyph(value).ok_or_else(|| err("bad base glyph"))?),
                    "shift" => shift = Some(glyph(value).ok_or_else(|| err("bad shift glyph"))?),
                    _ => return Err(err("unknown field")),
                }
            }
            let (hid, base, shift) = match (hid, base, shift) {
                (Some(h), Some(b), Some(s)) => (h, b, s),
                _ => return Err(err("need hid, base and shift")),
            };
            if glyphs[hid as usize].is_some() {
                return Err(KeymapError::Duplicate { line: line_no, hid });
            }
            glyphs[hid as usize] = Some((base, shift));
            reverse.entry(base).or_insert((hid, false));
            reverse.entry(shift).or_insert((hid, true));
        }
        Ok(Keymap { name, glyphs, reverse })
    }

    pub fn us_qwerty() -> &'static Keymap {
        static US: OnceLock<Keymap> = OnceLock::new();
        US.get_or_init(|| Keymap::parse(US_QWERTY).expect("bundled keymap parses"))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn to_char(&self, hid_code: u8, modifiers: Modifiers) -> Option<char> {
        let (base, shifted) = self.glyphs[hid_code as usize]?;
        Some(if modifiers.shift() { shifted } else { base })
    }

    /// HID code and whether shift is needed to type `c`.
    pub fn to_key(&self, c: char) -> Option<(u8, bool)> {
        self.reverse.get(&c).copied()
    }
}

fn glyph(value: &str) -> Option<char> {
    match value {
        "space" => Some(' '),
        "enter" => Some('\n'),
        "tab" => Some('\t'),
        _ => {
            let mut chars = value.chars();
            let c = chars.next()?;
            chars.next().is_none().then_some(c)
        }
    }
}
