//! Forward maximum matching over chunks, reportable-type filtering and
//! abbreviation expansion.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::preprocess::{Chunk, NormalizedNote};
use crate::terminology::trie::fold_str;
use crate::terminology::{AbbreviationLookup, AbbreviationTable, SemanticType, TermIndex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub note_id: String,
    pub chunk_index: usize,
    pub norm_start: usize,
    pub norm_end: usize,
    pub raw_start: usize,
    pub raw_end: usize,
    /// Matched text as it appears in the note, restored breaks shown as spaces.
    pub surface: String,
    pub canonical_phrase: String,
    pub concept_id: Option<String>,
    pub semantic_type: SemanticType,
    /// 1-based count of this canonical phrase so far in the note.
    pub occurrence_ordinal: usize,
    /// The surface is an abbreviation with several candidate expansions.
    #[serde(default)]
    pub ambiguous: bool,
}

/// All lexicon matches in `chunk`, unfiltered. Ordinals are left at 0; see
/// [`assign_ordinals`].
pub fn recognize(chunk: &Chunk, note: &NormalizedNote, raw_text: &str, index: &TermIndex) -> Vec<Mention> {
    index
        .find_all(&chunk.text)
        .into_iter()
        .map(|m| {
            let norm_start = chunk.norm_start + m.start;
            let norm_end = chunk.norm_start + m.end;
            let (raw_start, raw_end) = note.raw_range(norm_start, norm_end, raw_text);
            let surface = chunk.text[m.start..m.end].to_string();
            Mention {
                note_id: chunk.note_id.clone(),
                chunk_index: chunk.chunk_index,
                norm_start,
                norm_end,
                raw_start,
                raw_end,
                canonical_phrase: surface.clone(),
                surface,
                concept_id: Some(m.entry.concept_id.clone()),
                semantic_type: m.entry.semantic_type,
                occurrence_ordinal: 0,
                ambiguous: false,
            }
        })
        .collect()
}

pub fn filter_reportable(mentions: Vec<Mention>) -> Vec<Mention> {
    mentions
        .into_iter()
        .filter(|m| m.semantic_type.is_reportable())
        .collect()
}

pub fn expand_abbreviation(mut m: Mention, table: &AbbreviationTable) -> Mention {
    match table.lookup(&m.surface) {
        AbbreviationLookup::Unambiguous(e) => {
            m.canonical_phrase = e.full_form.clone();
            if let Some(t) = e.semantic_type {
                m.semantic_type = t;
            }
        }
        AbbreviationLookup::Ambiguous(_) => {
            m.canonical_phrase = m.surface.clone();
            m.ambiguous = true;
        }
        AbbreviationLookup::Unknown => {}
    }
    m
}

/// Numbers repeated canonical phrases (case-insensitively) in note order.
pub fn assign_ordinals(mentions: &mut [Mention]) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for m in mentions {
        let n = seen.entry(fold_str(&m.canonical_phrase)).or_insert(0);
        *n += 1;
        m.occurrence_ordinal = *n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{chunk_note, restore_linebreaks, ChunkerConfig, RawNote};
    use crate::terminology::{build_index, LexiconEntry};

    fn entry(surface: &str, t: SemanticType) -> LexiconEntry {
        LexiconEntry {
            surface: surface.into(),
            concept_id: format!("C-{surface}"),
            semantic_type: t,
        }
    }

    fn run(text: &str, entries: &[LexiconEntry]) -> Vec<Mention> {
        let raw = RawNote::new("n1", text);
        let note = restore_linebreaks(&raw);
        let index = build_index(entries);
        chunk_note(&note, &ChunkerConfig::default())
            .iter()
            .flat_map(|c| recognize(c, &note, &raw.text, &index))
            .collect()
    }

    const D: SemanticType = SemanticType::DiseaseSyndromeOrPathologicFunction;

    #[test]
    fn admission_sentence() {
        let lex = [
            entry("small bowel obstruction", D),
            entry("bowel obstruction", D),
            entry("ileus", D),
        ];
        let found = run("concerning for partial small bowel obstruction and/or ileus", &lex);
        let surfaces: Vec<_> = found.iter().map(|m| m.surface.as_str()).collect();
        assert_eq!(surfaces, ["small bowel obstruction", "ileus"]);
    }

    #[test]
    fn nested_prefers_longest() {
        let found = run("heart failure", &[entry("heart", D), entry("heart failure", D)]);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].surface, "heart failure");
    }

    #[test]
    fn empty_lexicon() {
        assert!(run("heart failure", &[]).is_empty());
    }

    #[test]
    fn raw_offsets_span_joined_breaks() {
        let text = "with small bowel\r\nobstruction noted";
        let found = run(text, &[entry("small bowel obstruction", D)]);
        assert_eq!(found.len(), 1);
        let m = &found[0];
        assert_eq!(m.surface, "small bowel obstruction");
        assert_eq!(&text[m.raw_start..m.raw_end], "small bowel\r\nobstruction");
    }

    #[test]
    fn filter_keeps_order() {
        let lex = [
            entry("a", D),
            entry("b", SemanticType::Other),
            entry("c", SemanticType::ChemicalOrDrug),
            entry("d", SemanticType::Other),
            entry("e", D),
        ];
        let all = run("a b c d e", &lex);
        assert_eq!(all.len(), 5);
        let kept: Vec<_> = filter_reportable(all.clone())
            .into_iter()
            .map(|m| m.surface)
            .collect();
        let oracle: Vec<_> = all
            .into_iter()
            .filter(|m| m.semantic_type != SemanticType::Other)
            .map(|m| m.surface)
            .collect();
        assert_eq!(kept, oracle);
        assert_eq!(kept, ["a", "c", "e"]);
    }

    #[test]
    fn abbreviations_expand_or_flag() {
        let table = AbbreviationTable::parse(
            "HSM\thepatosplenomegaly\tSign, Symptom, or Finding\n\
             NPH\tneutral protamine hagedorn\n\
             RA\troom air\n\
             RA\trheumatoid arthritis\n",
            "t",
        )
        .unwrap();
        let lex = [
            entry("hsm", SemanticType::Other),
            entry("nph", SemanticType::ChemicalOrDrug),
            entry("ra", D),
        ];
        let found: Vec<_> = run("HSM noted, on NPH, RA", &lex)
            .into_iter()
            .map(|m| expand_abbreviation(m, &table))
            .collect();
        assert_eq!(found[0].canonical_phrase, "hepatosplenomegaly");
        assert_eq!(found[0].semantic_type, SemanticType::SignSymptomOrFinding);
        assert_eq!(found[1].canonical_phrase, "neutral protamine hagedorn");
        assert_eq!(found[1].semantic_type, SemanticType::ChemicalOrDrug);
        assert_eq!(found[2].canonical_phrase, "RA");
        assert!(found[2].ambiguous);
        // keys are case-sensitive
        let lower = run("hsm", &lex).pop().unwrap();
        assert_eq!(expand_abbreviation(lower, &table).canonical_phrase, "hsm");
    }

    #[test]
    fn ordinals_count_repeats() {
        let mut found = run("Fever, chills, fever", &[entry("fever", D), entry("chills", D)]);
        assign_ordinals(&mut found);
        let ords: Vec<_> = found.iter().map(|m| m.occurrence_ordinal).collect();
        assert_eq!(ords, [1, 1, 2]);
    }
}
