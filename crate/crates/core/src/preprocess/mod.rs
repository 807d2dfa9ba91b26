//! Line-break restoration, tokenization, segmentation and token-budget chunking.

mod chunker;
mod linebreaks;
mod segment;
mod tokens;

pub use chunker::{chunk_note, Chunk, ChunkerConfig};
pub use linebreaks::{
    is_section_header, restore_linebreaks, section_header_len, starts_with_list_marker,
    NormalizedNote, RawNote,
};
pub use segment::{enclosing_sentence, paragraph_spans, sentence_spans};
pub use tokens::{count_tokens, token_spans};
