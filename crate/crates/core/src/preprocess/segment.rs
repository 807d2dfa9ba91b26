//! Paragraph and sentence segmentation. Both return byte ranges that tile
//! the input exactly; separating whitespace stays with the preceding piece.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

use super::linebreaks::section_header_len;

fn blank_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:\r?\n[ \t]*){2,}").unwrap())
}

fn tile(len: usize, mut cuts: Vec<usize>) -> Vec<Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    cuts.retain(|&c| c > 0 && c < len);
    cuts.sort_unstable();
    cuts.dedup();
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for c in cuts {
        out.push(start..c);
        start = c;
    }
    out.push(start..len);
    out
}

/// Paragraphs are separated by one or more blank lines.
pub fn paragraph_spans(text: &str) -> Vec<Range<usize>> {
    let cuts = blank_line_re().find_iter(text).map(|m| m.end()).collect();
    tile(text.len(), cuts)
}

/// Sentence boundaries: `.`/`!`/`?` followed by whitespace and then an
/// upper-case letter or digit; every remaining line break; and the colon of
/// a section header at the start of a line.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let mut cuts = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();

    for (k, &(i, c)) in chars.iter().enumerate() {
        match c {
            '\n' => cuts.push(i + 1),
            '.' | '!' | '?' => {
                let mut j = k + 1;
                while j < chars.len() && chars[j].1.is_whitespace() {
                    j += 1;
                }
                if j > k + 1 && j < chars.len() {
                    let n = chars[j].1;
                    if n.is_uppercase() || n.is_ascii_digit() {
                        cuts.push(chars[j].0);
                    }
                }
            }
            _ => {}
        }
    }

    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        if let Some(h) = section_header_len(line) {
            let rest = &line[h..];
            let ws = rest.len() - rest.trim_start_matches([' ', '\t']).len();
            cuts.push(line_start + h + ws);
        }
        line_start += line.len();
    }

    tile(text.len(), cuts)
}

/// The sentence range containing the byte range `[start, end)`, widened to
/// cover several sentences if the range crosses a boundary.
pub fn enclosing_sentence(text: &str, start: usize, end: usize) -> Range<usize> {
    let spans = sentence_spans(text);
    let first = spans
        .iter()
        .find(|r| r.contains(&start) || (start == r.end && start == text.len()))
        .map(|r| r.start)
        .unwrap_or(0);
    let last = spans
        .iter()
        .find(|r| end > r.start && end <= r.end)
        .map(|r| r.end)
        .unwrap_or(text.len());
    first..last.max(first)
}
