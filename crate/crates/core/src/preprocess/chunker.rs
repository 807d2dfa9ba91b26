use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::linebreaks::NormalizedNote;
use super::segment::{paragraph_spans, sentence_spans};
use super::tokens::count_tokens;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkerConfig {
    pub max_tokens: usize,
    /// Notes above this many tokens are reported but still chunked.
    pub hard_note_limit: usize,
    /// Multiplies `max_tokens` to tighten (or loosen) the budget.
    pub token_scale: f64,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        ChunkerConfig {
            max_tokens: 800,
            hard_note_limit: 8000,
            token_scale: 1.0,
        }
    }
}

impl ChunkerConfig {
    /// Informational input:output length ratio for the structuring model.
    pub const IO_RATIO_HINT: (u32, u32) = (1, 8);

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Error::Config {
            field: field.into(),
            message: message.into(),
        };
        if self.max_tokens == 0 {
            return Err(bad("max_tokens", "must be positive"));
        }
        if self.hard_note_limit == 0 {
            return Err(bad("hard_note_limit", "must be positive"));
        }
        if self.max_tokens > self.hard_note_limit {
            return Err(bad("max_tokens", "must not exceed hard_note_limit"));
        }
        if !(self.token_scale.is_finite() && self.token_scale > 0.0) {
            return Err(bad("token_scale", "must be a positive number"));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        ((self.max_tokens as f64 * self.token_scale).floor() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub note_id: String,
    pub chunk_index: usize,
    pub norm_start: usize,
    pub norm_end: usize,
    pub text: String,
    pub token_count: usize,
    /// Set when a single sentence alone exceeds the budget.
    pub oversize: bool,
}

struct Packer<'a> {
    text: &'a str,
    budget: usize,
    done: Vec<(Range<usize>, usize)>,
    open: Option<(Range<usize>, usize)>,
}

impl Packer<'_> {
    fn push(&mut self, piece: Range<usize>, tokens: usize) {
        match &mut self.open {
            Some((range, count)) if *count + tokens <= self.budget => {
                range.end = piece.end;
                *count += tokens;
            }
            _ => {
                self.flush();
                self.open = Some((piece, tokens));
            }
        }
    }

    fn flush(&mut self) {
        if let Some(open) = self.open.take() {
            self.done.push(open);
        }
    }

    fn push_paragraph(&mut self, para: Range<usize>) {
        let tokens = count_tokens(&self.text[para.clone()]);
        if tokens <= self.budget {
            self.push(para, tokens);
            return;
        }
        let base = para.start;
        for s in sentence_spans(&self.text[para]) {
            let piece = base + s.start..base + s.end;
            let t = count_tokens(&self.text[piece.clone()]);
            self.push(piece, t);
        }
    }
}

/// Greedily packs whole paragraphs under the token budget. Paragraphs over
/// the budget are packed sentence by sentence; a sentence over the budget is
/// emitted alone and flagged `oversize`.
pub fn chunk_note(note: &NormalizedNote, cfg: &ChunkerConfig) -> Vec<Chunk> {
    let mut packer = Packer {
        text: &note.text,
        budget: cfg.budget(),
        done: Vec::new(),
        open: None,
    };
    for para in paragraph_spans(&note.text) {
        packer.push_paragraph(para);
    }
    packer.flush();

    let budget = packer.budget;
    packer
        .done
        .into_iter()
        .enumerate()
        .map(|(chunk_index, (range, _))| {
            let text = note.text[range.clone()].to_string();
            let token_count = count_tokens(&text);
            Chunk {
                note_id: note.note_id.clone(),
                chunk_index,
                norm_start: range.start,
                norm_end: range.end,
                text,
                token_count,
                oversize: token_count > budget,
            }
        })
        .collect()
}
