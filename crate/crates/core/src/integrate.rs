//! Aligning backend answers to mentions, assembling per-note results and
//! writing JSONL.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::assertion::AssertionStatus;
use crate::attributes::{apply_applicability, Attr, AttributeLine, AttributeSet, RawAttributes};
use crate::error::{Error, Result};
use crate::recognition::Mention;
use crate::terminology::{ApplicabilityTable, SemanticType};

pub const DEFAULT_MISMATCH_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    /// `(line index, mention index)`, strictly increasing in both.
    pub pairs: Vec<(usize, usize)>,
    /// Line indices that matched no mention.
    pub dropped: Vec<usize>,
}

fn entity_matches(m: &Mention, entity: &str) -> bool {
    let entity = entity.to_lowercase();
    m.canonical_phrase.to_lowercase() == entity || m.surface.to_lowercase() == entity
}

/// Greedy monotone matching of answer lines onto mentions.
pub fn align(mentions: &[Mention], lines: &[AttributeLine]) -> Alignment {
    let mut out = Alignment::default();
    let mut cursor = 0;
    for (li, line) in lines.iter().enumerate() {
        let entity = line.entity.trim();
        match (cursor..mentions.len()).find(|&mi| entity_matches(&mentions[mi], entity)) {
            Some(mi) => {
                out.pairs.push((li, mi));
                cursor = mi + 1;
            }
            None => out.dropped.push(li),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredEntity {
    pub note_id: String,
    pub phrase: String,
    pub surface: String,
    pub span: Span,
    pub semantic_type: SemanticType,
    pub assertion_status: AssertionStatus,
    pub locations: Attr<Vec<String>>,
    pub modifiers: Attr<Vec<String>>,
    pub value: Attr<String>,
    pub unit: Attr<String>,
    pub purpose: Attr<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ambiguous: bool,
}

impl StructuredEntity {
    pub fn attributes(&self) -> AttributeSet {
        AttributeSet {
            locations: self.locations.clone(),
            modifiers: self.modifiers.clone(),
            value: self.value.clone(),
            unit: self.unit.clone(),
            purpose: self.purpose.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteResult {
    pub note_id: String,
    pub entities: Vec<StructuredEntity>,
    pub dropped_attribute_lines: usize,
    pub total_attribute_lines: usize,
    pub rejected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl NoteResult {
    /// A note abandoned because its backend failed.
    pub fn failed(note_id: impl Into<String>, error: impl ToString) -> Self {
        NoteResult {
            note_id: note_id.into(),
            entities: Vec::new(),
            dropped_attribute_lines: 0,
            total_attribute_lines: 0,
            rejected: true,
            error: Some(error.to_string()),
        }
    }

    pub fn mismatch_ratio(&self) -> f64 {
        mismatch_ratio(self.dropped_attribute_lines, self.total_attribute_lines)
    }

    pub fn rejection(&self) -> Option<Rejection> {
        self.rejected.then(|| Rejection {
            note_id: self.note_id.clone(),
            dropped: self.dropped_attribute_lines,
            total: self.total_attribute_lines,
            ratio: self.mismatch_ratio(),
            error: self.error.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub note_id: String,
    pub dropped: usize,
    pub total: usize,
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn mismatch_ratio(dropped: usize, total: usize) -> f64 {
    dropped as f64 / total.max(1) as f64
}

/// Everything known about one note's mentions, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct NoteAnnotations {
    pub mentions: Vec<Mention>,
    pub statuses: Vec<AssertionStatus>,
    pub attributes: Vec<RawAttributes>,
    pub dropped_lines: usize,
    pub total_lines: usize,
}

fn check_span(raw_text: &str, m: &Mention) -> Result<()> {
    let ok = m.raw_start < m.raw_end
        && m.raw_end <= raw_text.len()
        && raw_text.is_char_boundary(m.raw_start)
        && raw_text.is_char_boundary(m.raw_end);
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "span {}..{} of {:?} invalid for note {}",
            m.raw_start, m.raw_end, m.surface, m.note_id
        )))
    }
}

pub fn assemble(
    note_id: &str,
    raw_text: &str,
    ann: &NoteAnnotations,
    table: &ApplicabilityTable,
    threshold: f64,
) -> Result<NoteResult> {
    let n = ann.mentions.len();
    if ann.statuses.len() != n || ann.attributes.len() != n {
        return Err(Error::Contract(format!(
            "note {note_id}: {n} mentions but {} statuses and {} attribute sets",
            ann.statuses.len(),
            ann.attributes.len()
        )));
    }
    let mut entities = Vec::with_capacity(n);
    for ((m, &status), raw) in ann.mentions.iter().zip(&ann.statuses).zip(&ann.attributes) {
        if m.note_id != note_id {
            return Err(Error::Contract(format!(
                "mention from note {} passed to note {note_id}",
                m.note_id
            )));
        }
        check_span(raw_text, m)?;
        if m.canonical_phrase.is_empty() {
            return Err(Error::Contract(format!("empty phrase in note {note_id}")));
        }
        let attrs = apply_applicability(m.semantic_type, raw, table);
        entities.push(StructuredEntity {
            note_id: note_id.to_string(),
            phrase: m.canonical_phrase.clone(),
            surface: raw_text[m.raw_start..m.raw_end].to_string(),
            span: Span { start: m.raw_start, end: m.raw_end },
            semantic_type: m.semantic_type,
            assertion_status: status,
            locations: attrs.locations,
            modifiers: attrs.modifiers,
            value: attrs.value,
            unit: attrs.unit,
            purpose: attrs.purpose,
            ambiguous: m.ambiguous,
        });
    }
    entities.sort_by_key(|e| (e.span.start, e.span.end));
    let rejected = mismatch_ratio(ann.dropped_lines, ann.total_lines) > threshold;
    if rejected {
        entities.clear();
    }
    Ok(NoteResult {
        note_id: note_id.to_string(),
        entities,
        dropped_attribute_lines: ann.dropped_lines,
        total_attribute_lines: ann.total_lines,
        rejected,
        error: None,
    })
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Contract(e.to_string()))?;
    w.write_all(line.as_bytes()).map_err(Error::Output)?;
    w.write_all(b"\n").map_err(Error::Output)
}

/// One entity per line, in result order.
pub fn write_entities<W: Write>(w: &mut W, results: &[NoteResult]) -> Result<()> {
    for e in results.iter().flat_map(|r| &r.entities) {
        write_line(w, e)?;
    }
    w.flush().map_err(Error::Output)
}

/// One `NoteResult` per line.
pub fn write_notes<W: Write>(w: &mut W, results: &[NoteResult]) -> Result<()> {
    for r in results {
        write_line(w, r)?;
    }
    w.flush().map_err(Error::Output)
}

pub fn write_rejections<W: Write>(w: &mut W, results: &[NoteResult]) -> Result<()> {
    for r in results.iter().filter_map(NoteResult::rejection) {
        write_line(w, &r)?;
    }
    w.flush().map_err(Error::Output)
}

pub fn serialize(results: &[NoteResult]) -> String {
    let mut buf = Vec::new();
    write_entities(&mut buf, results).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Reads entity JSONL, skipping blank lines.
pub fn parse_entities<R: BufRead>(reader: R, origin: &str) -> Result<Vec<StructuredEntity>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?);
    }
    Ok(out)
}
