//! Lexicon loading, the compiled term index, abbreviations and the
//! semantic-type applicability table.

mod abbreviations;
mod applicability;
pub mod cache;
mod lexicon;
mod semantic;
pub mod trie;

pub use abbreviations::{AbbreviationLookup, AbbreviationTable, Expansion};
pub use applicability::{applicable_attributes, ApplicabilityTable};
pub use lexicon::{
    build_index, load_lexicon, parse_lexicon, Lexicon, LexiconEntry, LoadReport, TermIndex,
    TermMatch,
};
pub use semantic::{AttributeKind, KindSet, SemanticType, UnknownSemanticType};
