use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNote {
    pub note_id: String,
    pub text: String,
}

impl RawNote {
    pub fn new(note_id: impl Into<String>, text: impl Into<String>) -> Self {
        RawNote {
            note_id: note_id.into(),
            text: text.into(),
        }
    }
}

/// Note text with formatting line breaks joined.
///
/// `offset_map[i]` is the raw byte offset of normalized byte `i`; the map has
/// one extra trailing entry equal to the raw length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedNote {
    pub note_id: String,
    pub text: String,
    pub offset_map: Vec<usize>,
}

impl NormalizedNote {
    pub fn raw_offset(&self, norm: usize) -> usize {
        self.offset_map[norm]
    }

    /// Raw byte range covering the normalized range `[start, end)`.
    pub fn raw_range(&self, start: usize, end: usize, raw: &str) -> (usize, usize) {
        if start >= end {
            let r = self.offset_map[start];
            return (r, r);
        }
        let last = self.text[..end]
            .char_indices()
            .next_back()
            .map(|(i, _)| i)
            .unwrap_or(start);
        let raw_last = self.offset_map[last];
        let width = raw[raw_last..].chars().next().map_or(0, char::len_utf8);
        (self.offset_map[start], raw_last + width)
    }
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[ \t]*[A-Z][A-Z0-9&/()'\-]*(?:[ \t]+[A-Z0-9&/()'\-]+)*[ \t]*:").unwrap())
}

fn list_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[ \t]*(?:[-*•·▪]|\d{1,3}[.)])(?:\s|$)").unwrap())
}

/// Lines that open a section: upper-case words followed by a colon.
pub fn is_section_header(line: &str) -> bool {
    header_re().is_match(line)
}

/// Byte length of a leading section header (through the colon), if any.
pub fn section_header_len(line: &str) -> Option<usize> {
    header_re().find(line).map(|m| m.end())
}

pub fn starts_with_list_marker(line: &str) -> bool {
    list_marker_re().is_match(line)
}

fn keep_break(prev: &str, next: &str) -> bool {
    let prev_t = prev.trim_end();
    if prev_t.trim_start().is_empty() || next.trim().is_empty() {
        return true;
    }
    if prev_t.ends_with(['.', '!', '?', ':']) {
        return true;
    }
    starts_with_list_marker(next) || is_section_header(next)
}

/// Joins formatting line breaks with a single space and keeps paragraph/list
/// breaks. A `\r\n` pair that gets joined becomes one space.
pub fn restore_linebreaks(raw: &RawNote) -> NormalizedNote {
    let src = raw.text.as_str();
    let mut text = String::with_capacity(src.len());
    let mut offset_map = Vec::with_capacity(src.len() + 1);

    let breaks: Vec<usize> = src.match_indices('\n').map(|(i, _)| i).collect();
    let mut line_start = 0;
    let mut cursor = 0;
    for (k, &nl) in breaks.iter().enumerate() {
        let cr = nl > line_start && src.as_bytes()[nl - 1] == b'\r';
        let prev_end = if cr { nl - 1 } else { nl };
        let next_end = breaks.get(k + 1).copied().unwrap_or(src.len());
        let next_line = src[nl + 1..next_end].trim_end_matches('\r');
        let keep = keep_break(&src[line_start..prev_end], next_line);

        let copy_to = if keep { nl + 1 } else { prev_end };
        text.push_str(&src[cursor..copy_to]);
        offset_map.extend(cursor..copy_to);
        if !keep {
            text.push(' ');
            offset_map.push(prev_end);
        }
        cursor = nl + 1;
        line_start = nl + 1;
    }
    text.push_str(&src[cursor..]);
    offset_map.extend(cursor..src.len());
    offset_map.push(src.len());

    NormalizedNote {
        note_id: raw.note_id.clone(),
        text,
        offset_map,
    }
}
