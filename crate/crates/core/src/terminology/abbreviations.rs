use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::semantic::SemanticType;
use super::trie::fold_str;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub full_form: String,
    pub semantic_type: Option<SemanticType>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbbreviationLookup<'a> {
    Unknown,
    Unambiguous(&'a Expansion),
    Ambiguous(&'a [Expansion]),
}

/// Abbreviation to expansions. Keys are case-sensitive.
#[derive(Debug, Clone, Default)]
pub struct AbbreviationTable {
    map: HashMap<String, Vec<Expansion>>,
}

impl AbbreviationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// `abbrev<TAB>expansion[<TAB>semantic_type]`, one expansion per line.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut table = AbbreviationTable::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if !(2..=3).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    "expected `abbrev<TAB>expansion[<TAB>semantic_type]`",
                ));
            }
            let semantic_type = match fields.get(2) {
                Some(name) if !name.is_empty() => Some(
                    name.parse()
                        .map_err(|e: super::semantic::UnknownSemanticType| {
                            Error::parse(origin, i + 1, e.to_string())
                        })?,
                ),
                _ => None,
            };
            table.insert(fields[0], fields[1], semantic_type);
        }
        Ok(table)
    }

    pub fn insert(&mut self, abbrev: &str, full_form: &str, semantic_type: Option<SemanticType>) {
        let list = self.map.entry(abbrev.to_string()).or_default();
        if !list.iter().any(|e| e.full_form == full_form) {
            list.push(Expansion {
                full_form: full_form.to_string(),
                semantic_type,
            });
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn lookup(&self, abbrev: &str) -> AbbreviationLookup<'_> {
        match self.map.get(abbrev).map(Vec::as_slice) {
            None | Some([]) => AbbreviationLookup::Unknown,
            Some([one]) => AbbreviationLookup::Unambiguous(one),
            Some(many) => AbbreviationLookup::Ambiguous(many),
        }
    }

    pub fn expansions(&self, abbrev: &str) -> &[Expansion] {
        self.map.get(abbrev).map(Vec::as_slice).unwrap_or(&[])
    }

    /// True if one phrase is a listed abbreviation of the other. Keys are
    /// matched exactly first, then case-insensitively; expansions always
    /// compare case-insensitively.
    pub fn relates(&self, a: &str, b: &str) -> bool {
        self.abbreviates(a, b) || self.abbreviates(b, a)
    }

    fn abbreviates(&self, short: &str, long: &str) -> bool {
        let long = fold_str(long.trim());
        let short = short.trim();
        let hit = |list: &[Expansion]| list.iter().any(|e| fold_str(&e.full_form) == long);
        if let Some(list) = self.map.get(short) {
            if hit(list) {
                return true;
            }
        }
        let folded = fold_str(short);
        self.map
            .iter()
            .any(|(k, list)| fold_str(k) == folded && hit(list))
    }
}
