use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::semantic::SemanticType;
use super::trie::{fold_str, SurfaceTrie};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LexiconEntry {
    /// Case-folded surface form.
    pub surface: String,
    pub concept_id: String,
    pub semantic_type: SemanticType,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub duplicates: usize,
    /// Type names that did not parse and were mapped to `Other`, with counts.
    pub unknown_types: Vec<(String, usize)>,
}

impl LoadReport {
    pub fn unknown_type_count(&self) -> usize {
        self.unknown_types.iter().map(|(_, n)| n).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
    pub report: LoadReport,
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon(&text, &path.display().to_string())
}

/// Parses `surface<TAB>concept_id<TAB>semantic_type` lines. Blank lines are skipped.
pub fn parse_lexicon(text: &str, origin: &str) -> Result<Lexicon> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut report = LoadReport::default();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let surface = fold_str(fields[0].trim());
        if surface.is_empty() {
            return Err(Error::parse(origin, line_no, "empty surface"));
        }
        let concept_id = fields[1].trim().to_string();
        let type_name = fields[2].trim();
        let (semantic_type, known) = SemanticType::from_name_lossy(type_name);
        if !known {
            match report.unknown_types.iter_mut().find(|(n, _)| n == type_name) {
                Some((_, n)) => *n += 1,
                None => report.unknown_types.push((type_name.to_string(), 1)),
            }
        }
        if !seen.insert((surface.clone(), concept_id.clone())) {
            report.duplicates += 1;
            continue;
        }
        entries.push(LexiconEntry {
            surface,
            concept_id,
            semantic_type,
        });
    }

    Ok(Lexicon { entries, report })
}

/// A recognized lexicon occurrence in some text (byte offsets).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermMatch<'a> {
    pub start: usize,
    pub end: usize,
    pub entry: &'a LexiconEntry,
}

/// Compiled lexicon. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermIndex {
    trie: SurfaceTrie,
    entries: Vec<LexiconEntry>,
    alternatives: usize,
}

impl TermIndex {
    /// Earlier entries win when two entries share a surface.
    pub fn build(entries: &[LexiconEntry]) -> TermIndex {
        let mut trie = SurfaceTrie::new();
        let mut kept = Vec::with_capacity(entries.len());
        let mut alternatives = 0;
        for entry in entries {
            match trie.insert(&entry.surface, kept.len() as u32) {
                Ok(()) => kept.push(entry.clone()),
                Err(first) => {
                    alternatives += 1;
                    debug!(
                        surface = %entry.surface,
                        kept = %kept[first as usize].concept_id,
                        alternative = %entry.concept_id,
                        "surface has several concepts; keeping the first"
                    );
                }
            }
        }
        TermIndex {
            trie,
            entries: kept,
            alternatives,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries shadowed by an earlier entry with the same surface.
    pub fn alternatives(&self) -> usize {
        self.alternatives
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn lookup(&self, surface: &str) -> Option<&LexiconEntry> {
        self.trie.get(surface).map(|id| &self.entries[id as usize])
    }

    /// Forward maximum matching over `text`.
    pub fn find_all<'a>(&'a self, text: &str) -> Vec<TermMatch<'a>> {
        self.trie
            .scan(text)
            .into_iter()
            .map(|m| TermMatch {
                start: m.start,
                end: m.end,
                entry: &self.entries[m.id as usize],
            })
            .collect()
    }

    pub fn longest_match_at<'a>(&'a self, text: &str, start: usize) -> Option<TermMatch<'a>> {
        self.trie.longest_match_at(text, start).map(|m| TermMatch {
            start: m.start,
            end: m.end,
            entry: &self.entries[m.id as usize],
        })
    }
}

pub fn build_index(entries: &[LexiconEntry]) -> TermIndex {
    TermIndex::build(entries)
}
